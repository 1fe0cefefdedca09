#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fixture.hpp"
#include "golden_report.hpp"
#include "oracles.hpp"
#include "seqtag/corpus.hpp"
#include "seqtag/error.hpp"
#include "seqtag/evaluator.hpp"

using namespace seqtag;

namespace {

std::vector<LabelId> tags(const Tagset& ts, std::initializer_list<const char*> names) {
  std::vector<LabelId> out;
  for (const char* n : names) out.push_back(*ts.find(n));
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("extract_spans examples") {
  const Tagset ts = Tagset::peyma();
  const std::size_t per = *ts.find_class("PER"), loc = *ts.find_class("LOC");
  CHECK(extract_spans(tags(ts, {"B-PER", "I-PER", "O"}), ts) == std::vector<Span>{{per, 0, 2}});
  CHECK(extract_spans(tags(ts, {"B-PER", "B-PER"}), ts) == std::vector<Span>{{per, 0, 1}, {per, 1, 2}});
  CHECK(extract_spans(tags(ts, {"O", "I-LOC", "I-LOC"}), ts) == std::vector<Span>{{loc, 1, 3}});
  CHECK(extract_spans(tags(ts, {"O", "I-LOC", "I-LOC"}), ts, OrphanPolicy::kDrop).empty());
  CHECK(extract_spans(tags(ts, {"B-PER", "I-LOC"}), ts) == std::vector<Span>{{per, 0, 1}, {loc, 1, 2}});
}

TEST_CASE("span count equals B- tags plus orphan openings") {
  const Tagset ts("two", {"A", "B"});
  Rng rng(1);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<LabelId> t(1 + rng.below(8));
    for (auto& l : t) l = static_cast<LabelId>(rng.below(5));
    std::size_t begins = 0;
    for (auto l : t) begins += ts.is_begin(l) ? 1 : 0;
    const std::size_t orphans = validate_bio(t, ts).size();
    CHECK(extract_spans(t, ts).size() == begins + orphans);
  }
}

TEST_CASE("phrase_f1 examples") {
  const Tagset ts = Tagset::peyma();
  const TagSequences gold{tags(ts, {"B-PER", "I-PER", "O", "B-LOC"})};
  CHECK(phrase_f1(gold, gold, ts).phrase_total.f1() == 1.0);
  const TagSequences half{tags(ts, {"B-PER", "I-PER", "B-ORG", "O"})};
  const EvalReport r = phrase_f1(gold, half, ts);
  CHECK(r.phrase_total == Counts{1, 2, 2});
  CHECK(r.phrase_total.precision() == 0.5);
  CHECK(r.phrase_total.recall() == 0.5);
  CHECK(r.phrase_total.f1() == 0.5);
  const EvalReport b = phrase_f1({tags(ts, {"B-PER", "I-PER"})}, {tags(ts, {"B-PER", "O"})}, ts);
  CHECK(b.phrase_total.tp == 0);
  CHECK(b.phrase_total.f1() == 0.0);
  CHECK_THROWS_AS(phrase_f1(gold, {tags(ts, {"O"})}, ts), Error);
  CHECK_THROWS_AS(phrase_f1(gold, {}, ts), Error);
}

TEST_CASE("word_f1 examples") {
  const Tagset ts = Tagset::peyma();
  const TagSequences gold{tags(ts, {"B-PER", "I-PER"})};
  CHECK(word_f1(gold, gold, ts).word_total.f1() == 1.0);
  const EvalReport r = word_f1(gold, {tags(ts, {"B-PER", "O"})}, ts);
  CHECK(r.word[*ts.find("B-PER") - 1].f1() == 1.0);
  CHECK(r.word[*ts.find("I-PER") - 1].f1() == 0.0);
  CHECK(r.word_total.f1() == 2.0 / 3.0);
  CHECK(render_report(r, ReportStyle::kPerTag).text.find("66.67") != std::string::npos);

  const EvalReport none = evaluate({tags(ts, {"O", "O"})}, {tags(ts, {"O", "O"})}, ts);
  CHECK(none.word_total.f1() == 0.0);
  CHECK(none.word_total == Counts{});
  CHECK(none.no_entities());
  CHECK(render_report(none, ReportStyle::kSummary).text.find("no entities") != std::string::npos);
  CHECK(render_report(none, ReportStyle::kSummary).table.find("undefined:precision,recall") != std::string::npos);
}

TEST_CASE("phrase counts match the span-set oracle exhaustively") {
  const Tagset ts("two", {"A", "B"});
  for (std::size_t n = 1; n <= 5; ++n) {
    const auto seqs = oracle::all_paths(n, 5);
    for (const auto& g : seqs) {
      const auto gs = oracle::spans(g);
      for (const auto& p : seqs) {
        const auto ps = oracle::spans(p);
        std::size_t tp = 0;
        for (const auto& s : ps) tp += gs.count(s);
        const EvalReport r = phrase_f1({g}, {p}, ts);
        if (r.phrase_total != Counts{tp, ps.size(), gs.size()}) {
          CHECK(r.phrase_total == Counts{tp, ps.size(), gs.size()});
          return;
        }
      }
    }
  }
}

TEST_CASE("self evaluation scores one at both levels") {
  const Corpus c = fixture::synthetic_corpus(200, 44);
  const EvalReport r = evaluate_corpora(c, c);
  CHECK(r.phrase_total.f1() == 1.0);
  CHECK(r.word_total.f1() == 1.0);
  CHECK(r.phrase_total.precision() == 1.0);
  CHECK(r.word_total.recall() == 1.0);
  const std::string text = render_report(r, ReportStyle::kPerTag).text;
  CHECK(text.find("100.00") != std::string::npos);
}

TEST_CASE("scores are invariant under sentence permutation") {
  const Corpus gold = fixture::synthetic_corpus(60, 1);
  TagSequences g = tags_of(gold), p = g;
  Rng rng(2);
  const LabelId top = static_cast<LabelId>(gold.tagset.num_labels());
  for (auto& s : p)
    for (auto& l : s)
      if (rng.uniform() < 0.2) l = static_cast<LabelId>(rng.below(static_cast<std::uint64_t>(top)));
  const EvalReport a = evaluate(g, p, gold.tagset);
  std::vector<std::size_t> perm(g.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(perm));
  TagSequences g2, p2;
  for (auto i : perm) {
    g2.push_back(g[i]);
    p2.push_back(p[i]);
  }
  const EvalReport b = evaluate(g2, p2, gold.tagset);
  CHECK(a.phrase == b.phrase);
  CHECK(a.word == b.word);
  CHECK(a.word_total.tp <= std::min(a.word_total.predicted, a.word_total.gold));
  CHECK(a.phrase_total.tp <= std::min(a.phrase_total.predicted, a.phrase_total.gold));
  CHECK(a.phrase_total.f1() <= 1.0);
}

TEST_CASE("evaluate_corpora rejects token mismatches with a line number") {
  const Tagset ts = Tagset::peyma();
  const Corpus gold = parse_conll("a\tO\nb\tO\n\nc\tO\n", ts);
  const Corpus pred = parse_conll("a\tO\nb\tO\n\nd\tO\n", ts);
  try {
    evaluate_corpora(gold, pred);
    FAIL("expected TokenMismatch");
  } catch (const LineError& e) {
    CHECK(e.code() == "TokenMismatch");
    CHECK(e.line() == 4);
  }
}

TEST_CASE("percent formatting rounds half up") {
  EvalReport r(Tagset("one", {"A"}));
  r.phrase[0] = Counts{1, 1, 2};  // F1 = 2/3
  r.phrase_total = r.phrase[0];
  const std::string text = render_report(r, ReportStyle::kPerClass).text;
  CHECK(text.find("66.67") != std::string::npos);
  r.phrase_total = Counts{1, 8, 8};  // 0.125 -> 12.50
  CHECK(render_report(r, ReportStyle::kPerClass).text.find("12.50") != std::string::npos);
}

TEST_CASE("per-tag report keeps the Peyma column order") {
  const std::string text = render_report(golden_peyma_report(), ReportStyle::kPerTag).text;
  std::size_t at = 0;
  for (const char* name : {"Date", "Location", "Money", "Organization", "Percent", "Person", "Time", "all classes"}) {
    const std::size_t next = text.find(name, at);
    REQUIRE(next != std::string::npos);
    at = next;
  }
}

TEST_CASE("reports match the golden files") {
  const EvalReport r = golden_peyma_report();
  CHECK(render_report(r, ReportStyle::kPerTag).text == slurp(SEQTAG_TEST_DIR "/golden/peyma_per_tag.txt"));
  CHECK(render_report(r, ReportStyle::kPerClass).text == slurp(SEQTAG_TEST_DIR "/golden/peyma_per_class.txt"));
  CHECK(render_report(r, ReportStyle::kPerTag).table == slurp(SEQTAG_TEST_DIR "/golden/peyma_per_tag.tsv"));
}

TEST_CASE("metrics text round trips through parse_metrics") {
  const EvalReport r = golden_peyma_report();
  const std::string text = metrics_text(r, "test2.");
  CHECK(text.find("test2.phrase.DAT.f1=") != std::string::npos);
  const EvalReport back = parse_metrics(metrics_text(r) + text, "test2.");
  CHECK(back.tagset == r.tagset);
  CHECK(back.word == r.word);
  CHECK(back.phrase == r.phrase);
  CHECK(back.word_total == r.word_total);
  CHECK(back.phrase_total == r.phrase_total);
  CHECK(render_report(back, ReportStyle::kPerTag).text == render_report(r, ReportStyle::kPerTag).text);
  CHECK(metrics_text(back) == metrics_text(r));
  CHECK(text.find("test2.word.I-TIM.precision.undefined=1") != std::string::npos);
  CHECK_THROWS_AS(parse_metrics("phrase.total.tp=1\n"), Error);
}
