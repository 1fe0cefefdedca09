#include "seqtag/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "seqtag/error.hpp"
#include "seqtag/text.hpp"

namespace seqtag {

// ---------------------------------------------------------------------------
// Spans and counts

std::vector<Span> extract_spans(std::span<const LabelId> tags, const Tagset& tagset,
                                OrphanPolicy policy) {
  std::vector<Span> spans;
  std::optional<Span> open;
  const auto close = [&](std::size_t end) {
    if (!open) return;
    open->end = end;
    spans.push_back(*open);
    open.reset();
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const LabelId tag = tags[i];
    if (tagset.is_begin(tag)) {
      close(i);
      open = Span{Tagset::class_of(tag), i, i};
    } else if (tagset.is_inside(tag)) {
      const auto cls = Tagset::class_of(tag);
      if (open && open->cls == cls) continue;
      close(i);
      if (policy == OrphanPolicy::kOpen) open = Span{cls, i, i};
    } else {
      close(i);
    }
  }
  close(tags.size());
  return spans;
}

double Counts::precision() const {
  return predicted == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(predicted);
}

double Counts::recall() const {
  return gold == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(gold);
}

double Counts::f1() const {
  const double p = precision(), r = recall();
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

EvalReport::EvalReport(Tagset ts)
    : tagset(std::move(ts)), word(2 * tagset.num_classes()), phrase(tagset.num_classes()) {}

bool EvalReport::no_entities() const {
  return word_total.gold == 0 && word_total.predicted == 0 && phrase_total.gold == 0 &&
         phrase_total.predicted == 0;
}

EvalReport& EvalReport::operator+=(const EvalReport& other) {
  if (!(tagset == other.tagset))
    throw runtime_error("ShapeMismatch", "cannot pool reports over different tagsets");
  for (std::size_t i = 0; i < word.size(); ++i) word[i] += other.word[i];
  for (std::size_t i = 0; i < phrase.size(); ++i) phrase[i] += other.phrase[i];
  word_total += other.word_total;
  phrase_total += other.phrase_total;
  sentences += other.sentences;
  tokens += other.tokens;
  return *this;
}

namespace {

void check_shapes(const TagSequences& gold, const TagSequences& pred) {
  if (gold.size() != pred.size())
    throw runtime_error("ShapeMismatch", std::to_string(gold.size()) + " gold sentences vs " +
                                             std::to_string(pred.size()) + " predicted");
  for (std::size_t s = 0; s < gold.size(); ++s)
    if (gold[s].size() != pred[s].size())
      throw runtime_error("ShapeMismatch", "sentence " + std::to_string(s) + " has " +
                                               std::to_string(gold[s].size()) + " gold tags vs " +
                                               std::to_string(pred[s].size()) + " predicted");
}

bool scored_label(const Tagset& ts, LabelId l) { return ts.is_begin(l) || ts.is_inside(l); }

void add_words(EvalReport& r, const std::vector<LabelId>& gold, const std::vector<LabelId>& pred) {
  const auto& ts = r.tagset;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (scored_label(ts, gold[i])) ++r.word[static_cast<std::size_t>(gold[i] - 1)].gold;
    if (scored_label(ts, pred[i])) ++r.word[static_cast<std::size_t>(pred[i] - 1)].predicted;
    if (scored_label(ts, gold[i]) && gold[i] == pred[i]) ++r.word[static_cast<std::size_t>(gold[i] - 1)].tp;
  }
}

void add_phrases(EvalReport& r, const std::vector<LabelId>& gold, const std::vector<LabelId>& pred,
                 OrphanPolicy policy) {
  const auto g = extract_spans(gold, r.tagset, policy);
  const auto p = extract_spans(pred, r.tagset, policy);
  for (const auto& s : g) ++r.phrase[s.cls].gold;
  for (const auto& s : p) ++r.phrase[s.cls].predicted;
  const std::set<Span> gold_set(g.begin(), g.end());
  for (const auto& s : p)
    if (gold_set.count(s)) ++r.phrase[s.cls].tp;
}

void recompute_totals(EvalReport& r) {
  r.word_total = {};
  r.phrase_total = {};
  for (const auto& c : r.word) r.word_total += c;
  for (const auto& c : r.phrase) r.phrase_total += c;
}

EvalReport score(const TagSequences& gold, const TagSequences& pred, const Tagset& tagset,
                 OrphanPolicy policy, bool words, bool phrases) {
  check_shapes(gold, pred);
  EvalReport r(tagset);
  for (std::size_t s = 0; s < gold.size(); ++s) {
    ++r.sentences;
    r.tokens += gold[s].size();
    if (words) add_words(r, gold[s], pred[s]);
    if (phrases) add_phrases(r, gold[s], pred[s], policy);
  }
  recompute_totals(r);
  return r;
}

}  // namespace

EvalReport evaluate(const TagSequences& gold, const TagSequences& pred, const Tagset& tagset,
                    OrphanPolicy policy) {
  return score(gold, pred, tagset, policy, true, true);
}

EvalReport phrase_f1(const TagSequences& gold, const TagSequences& pred, const Tagset& tagset,
                     OrphanPolicy policy) {
  return score(gold, pred, tagset, policy, false, true);
}

EvalReport word_f1(const TagSequences& gold, const TagSequences& pred, const Tagset& tagset) {
  return score(gold, pred, tagset, OrphanPolicy::kOpen, true, false);
}

TagSequences tags_of(const Corpus& corpus) {
  TagSequences out;
  out.reserve(corpus.size());
  for (const auto& s : corpus.sentences) out.push_back(s.tags);
  return out;
}

EvalReport evaluate_corpora(const Corpus& gold, const Corpus& pred, OrphanPolicy policy) {
  const auto mismatch = [&](std::size_t line, const std::string& msg) {
    return LineError("TokenMismatch", line, "in '" + pred.source_name + "': " + msg);
  };
  const std::size_t n = std::min(gold.size(), pred.size());
  for (std::size_t s = 0; s < n; ++s) {
    const auto& g = gold.sentences[s];
    const auto& p = pred.sentences[s];
    const std::size_t m = std::min(g.size(), p.size());
    for (std::size_t i = 0; i < m; ++i)
      if (g.tokens[i] != p.tokens[i])
        throw mismatch(p.line + i, "token '" + p.tokens[i] + "' differs from gold '" + g.tokens[i] + "'");
    if (g.size() != p.size())
      throw mismatch(p.line + m, "sentence " + std::to_string(s) + " has " + std::to_string(p.size()) +
                                     " tokens, gold has " + std::to_string(g.size()));
  }
  if (gold.size() != pred.size())
    throw mismatch(pred.size() > n ? pred.sentences[n].line : 0,
                   std::to_string(pred.size()) + " sentences, gold has " + std::to_string(gold.size()));
  return evaluate(tags_of(gold), tags_of(pred), gold.tagset, policy);
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

// Percent scale, two decimals, halves rounded up.
std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", std::floor(v * 10000.0 + 0.5) / 100.0);
  return buf;
}

std::string center(const std::string& s, std::size_t width) {
  if (s.size() >= width) return s;
  const std::size_t left = (width - s.size()) / 2;
  return std::string(left, ' ') + s + std::string(width - s.size() - left, ' ');
}

std::string pad_right(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

constexpr std::size_t kLabelWidth = 12;
constexpr std::size_t kGroupWidth = 17;
constexpr std::size_t kTotalWidth = 13;

std::string undefined_note(const Counts& c) {
  std::string note;
  if (!c.precision_defined()) note = "precision";
  if (!c.recall_defined()) note += note.empty() ? "recall" : ",recall";
  return note.empty() ? "-" : "undefined:" + note;
}

void table_row(std::ostringstream& out, const std::string& level, const std::string& name,
               const Counts& c) {
  out << level << '\t' << name << '\t' << c.tp << '\t' << c.predicted << '\t' << c.gold << '\t'
      << format_double(c.precision()) << '\t' << format_double(c.recall()) << '\t'
      << format_double(c.f1()) << '\t' << undefined_note(c) << '\n';
}

std::string per_tag_text(const EvalReport& r) {
  const auto& ts = r.tagset;
  std::vector<std::size_t> group(ts.num_classes());
  for (std::size_t c = 0; c < ts.num_classes(); ++c)
    group[c] = std::max(kGroupWidth, ts.display_name(c).size() + 2);
  const auto left_cell = [&](std::size_t c) { return (group[c] - 1) / 2; };
  const auto right_cell = [&](std::size_t c) { return group[c] - 1 - left_cell(c); };

  std::ostringstream out;
  out << std::string(kLabelWidth, ' ') << '|';
  for (std::size_t c = 0; c < ts.num_classes(); ++c) out << center(ts.display_name(c), group[c]) << '|';
  out << center("all classes", kTotalWidth) << "|\n";

  out << std::string(kLabelWidth, ' ') << '|';
  for (std::size_t c = 0; c < ts.num_classes(); ++c)
    out << center("B-", left_cell(c)) << '|' << center("I-", right_cell(c)) << '|';
  out << std::string(kTotalWidth, ' ') << "|\n";

  out << pad_right("word-f1", kLabelWidth) << '|';
  for (std::size_t c = 0; c < ts.num_classes(); ++c)
    out << center(pct(r.word[2 * c].f1()), left_cell(c)) << '|'
        << center(pct(r.word[2 * c + 1].f1()), right_cell(c)) << '|';
  out << center(pct(r.word_total.f1()), kTotalWidth) << "|\n";

  out << pad_right("phrase-f1", kLabelWidth) << '|';
  for (std::size_t c = 0; c < ts.num_classes(); ++c) out << center(pct(r.phrase[c].f1()), group[c]) << '|';
  out << center(pct(r.phrase_total.f1()), kTotalWidth) << "|\n";
  return out.str();
}

// Column order of the per-class table: the competition layout for Peyma,
// tagset order otherwise.
std::vector<std::size_t> per_class_order(const Tagset& ts) {
  std::vector<std::size_t> order;
  if (ts == Tagset::peyma()) {
    for (const char* c : {"PER", "ORG", "LOC", "DAT", "TIM", "MON", "PCT"}) order.push_back(*ts.find_class(c));
  } else {
    for (std::size_t c = 0; c < ts.num_classes(); ++c) order.push_back(c);
  }
  return order;
}

std::string per_class_text(const EvalReport& r) {
  const auto& ts = r.tagset;
  const auto order = per_class_order(ts);
  const auto width = [&](std::size_t c) { return std::max<std::size_t>(8, ts.classes()[c].size() + 2); };
  std::ostringstream out;
  out << std::string(kLabelWidth, ' ') << '|';
  for (auto c : order) out << center(ts.classes()[c], width(c)) << '|';
  out << center("Total F1", 10) << "|\n";
  out << pad_right("phrase-f1", kLabelWidth) << '|';
  for (auto c : order) out << center(pct(r.phrase[c].f1()), width(c)) << '|';
  out << center(pct(r.phrase_total.f1()), 10) << "|\n";
  return out.str();
}

std::string summary_text(const EvalReport& r) {
  std::ostringstream out;
  out << std::string(kLabelWidth, ' ') << '|' << center("P", 8) << '|' << center("R", 8) << '|'
      << center("F1", 8) << "|\n";
  const auto row = [&](const std::string& name, const Counts& c) {
    out << pad_right(name, kLabelWidth) << '|' << center(pct(c.precision()), 8) << '|'
        << center(pct(c.recall()), 8) << '|' << center(pct(c.f1()), 8) << "|\n";
  };
  row("phrase", r.phrase_total);
  row("word", r.word_total);
  return out.str();
}

}  // namespace

ReportStyle parse_report_style(std::string_view name) {
  if (name == "per-tag") return ReportStyle::kPerTag;
  if (name == "per-class") return ReportStyle::kPerClass;
  if (name == "summary") return ReportStyle::kSummary;
  throw usage_error("BadStyle", "unknown report style '" + std::string(name) +
                                    "' (expected per-tag, per-class or summary)");
}

RenderedReport render_report(const EvalReport& r, ReportStyle style) {
  RenderedReport out;
  std::ostringstream table;
  table << "level\tname\ttp\tpredicted\tgold\tprecision\trecall\tf1\tnote\n";
  const auto& ts = r.tagset;
  switch (style) {
    case ReportStyle::kPerTag:
      out.text = per_tag_text(r);
      for (std::size_t i = 0; i < r.word.size(); ++i)
        table_row(table, "word", ts.label_name(static_cast<LabelId>(i + 1)), r.word[i]);
      table_row(table, "word", "total", r.word_total);
      for (std::size_t c = 0; c < r.phrase.size(); ++c) table_row(table, "phrase", ts.classes()[c], r.phrase[c]);
      table_row(table, "phrase", "total", r.phrase_total);
      break;
    case ReportStyle::kPerClass:
      out.text = per_class_text(r);
      for (auto c : per_class_order(ts)) table_row(table, "phrase", ts.classes()[c], r.phrase[c]);
      table_row(table, "phrase", "total", r.phrase_total);
      break;
    case ReportStyle::kSummary:
      out.text = summary_text(r);
      table_row(table, "phrase", "total", r.phrase_total);
      table_row(table, "word", "total", r.word_total);
      break;
  }
  if (r.no_entities()) out.text += "note: no entities in gold or prediction\n";
  out.table = table.str();
  return out;
}

// ---------------------------------------------------------------------------
// Metrics files

namespace {

void metric_lines(std::ostringstream& out, const std::string& key, const Counts& c) {
  out << key << ".tp=" << c.tp << '\n';
  out << key << ".predicted=" << c.predicted << '\n';
  out << key << ".gold=" << c.gold << '\n';
  out << key << ".precision=" << format_double(c.precision()) << '\n';
  if (!c.precision_defined()) out << key << ".precision.undefined=1\n";
  out << key << ".recall=" << format_double(c.recall()) << '\n';
  if (!c.recall_defined()) out << key << ".recall.undefined=1\n";
  out << key << ".f1=" << format_double(c.f1()) << '\n';
  if (c.precision() + c.recall() == 0.0) out << key << ".f1.undefined=1\n";
}

std::string join(const std::vector<std::string>& parts) {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) s += (i ? "," : "") + parts[i];
  return s;
}

}  // namespace

std::string metrics_text(const EvalReport& r, const std::string& prefix) {
  const auto& ts = r.tagset;
  std::ostringstream out;
  std::vector<std::string> display;
  for (std::size_t c = 0; c < ts.num_classes(); ++c) display.push_back(ts.display_name(c));
  out << prefix << "tagset.name=" << ts.name() << '\n';
  out << prefix << "tagset.classes=" << join(ts.classes()) << '\n';
  out << prefix << "tagset.display=" << join(display) << '\n';
  out << prefix << "sentences=" << r.sentences << '\n';
  out << prefix << "tokens=" << r.tokens << '\n';
  out << prefix << "no_entities=" << (r.no_entities() ? 1 : 0) << '\n';
  for (std::size_t c = 0; c < r.phrase.size(); ++c)
    metric_lines(out, prefix + "phrase." + ts.classes()[c], r.phrase[c]);
  metric_lines(out, prefix + "phrase.total", r.phrase_total);
  for (std::size_t i = 0; i < r.word.size(); ++i)
    metric_lines(out, prefix + "word." + ts.label_name(static_cast<LabelId>(i + 1)), r.word[i]);
  metric_lines(out, prefix + "word.total", r.word_total);
  return out.str();
}

EvalReport parse_metrics(std::string_view text, const std::string& prefix) {
  std::map<std::string, std::string, std::less<>> kv;
  std::size_t line_no = 0;
  for (auto line : lines(text)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw LineError("MalformedLine", line_no, "expected key=value");
    if (!line.starts_with(prefix)) continue;
    kv[std::string(line.substr(prefix.size(), eq - prefix.size()))] = std::string(line.substr(eq + 1));
  }
  const auto get = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw data_error("MissingMetric", "metrics file lacks '" + prefix + key + "'");
    return it->second;
  };
  std::vector<std::string> classes, display;
  for (auto c : split(get("tagset.classes"), ',')) classes.emplace_back(c);
  if (kv.count("tagset.display"))
    for (auto c : split(get("tagset.display"), ',')) display.emplace_back(c);
  if (display.size() != classes.size()) display.clear();
  EvalReport r(Tagset(get("tagset.name"), classes, display));
  const auto counts = [&](const std::string& key) {
    return Counts{parse_uint(get(key + ".tp"), key), parse_uint(get(key + ".predicted"), key),
                  parse_uint(get(key + ".gold"), key)};
  };
  r.sentences = parse_uint(get("sentences"), "sentences");
  r.tokens = parse_uint(get("tokens"), "tokens");
  for (std::size_t c = 0; c < r.phrase.size(); ++c) r.phrase[c] = counts("phrase." + classes[c]);
  for (std::size_t i = 0; i < r.word.size(); ++i)
    r.word[i] = counts("word." + r.tagset.label_name(static_cast<LabelId>(i + 1)));
  recompute_totals(r);
  if (!(r.phrase_total == counts("phrase.total")) || !(r.word_total == counts("word.total")))
    throw data_error("CorruptMetrics", "totals disagree with per-label counts");
  return r;
}

}  // namespace seqtag
