#pragma once

// CoNLL-style scoring at two levels.
//
// Word level: every B-c and I-c label is its own category, scored over
// token positions; O is excluded from all counts. Phrase level: BIO spans
// must match gold exactly in class and boundaries. Totals are micro
// averages over pooled counts.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "seqtag/corpus.hpp"

namespace seqtag {

struct Span {
  std::size_t cls;
  std::size_t start;  // inclusive
  std::size_t end;    // exclusive

  auto operator<=>(const Span&) const = default;
};

enum class OrphanPolicy {
  kOpen,  // an I-c with no live c-span opens a new span (conlleval)
  kDrop,  // orphan I-c tokens are ignored
};

std::vector<Span> extract_spans(std::span<const LabelId> tags, const Tagset& tagset,
                                OrphanPolicy policy = OrphanPolicy::kOpen);

struct Counts {
  std::size_t tp = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;

  bool precision_defined() const { return predicted > 0; }
  bool recall_defined() const { return gold > 0; }
  // Zero when the denominator is zero.
  double precision() const;
  double recall() const;
  double f1() const;

  Counts& operator+=(const Counts& o) {
    tp += o.tp;
    predicted += o.predicted;
    gold += o.gold;
    return *this;
  }
  bool operator==(const Counts&) const = default;
};

struct EvalReport {
  Tagset tagset;
  // Indexed by label id - 1: B-c0, I-c0, B-c1, ...
  std::vector<Counts> word;
  Counts word_total;
  std::vector<Counts> phrase;  // per class
  Counts phrase_total;
  std::size_t sentences = 0;
  std::size_t tokens = 0;

  explicit EvalReport(Tagset ts);
  // Gold and prediction contain no entity at all.
  bool no_entities() const;
  // Pools counts; tagsets must agree.
  EvalReport& operator+=(const EvalReport& other);
};

using TagSequences = std::vector<std::vector<LabelId>>;

// Both levels in one pass. Throws Error{ShapeMismatch}.
EvalReport evaluate(const TagSequences& gold, const TagSequences& pred, const Tagset& tagset,
                    OrphanPolicy policy = OrphanPolicy::kOpen);
// Only the phrase-level section is filled.
EvalReport phrase_f1(const TagSequences& gold, const TagSequences& pred, const Tagset& tagset,
                     OrphanPolicy policy = OrphanPolicy::kOpen);
// Only the word-level section is filled.
EvalReport word_f1(const TagSequences& gold, const TagSequences& pred, const Tagset& tagset);

TagSequences tags_of(const Corpus& corpus);

// Gold and predicted corpora must carry identical tokens sentence by
// sentence; otherwise Error{TokenMismatch} names the first differing line
// of the prediction file.
EvalReport evaluate_corpora(const Corpus& gold, const Corpus& pred,
                            OrphanPolicy policy = OrphanPolicy::kOpen);

enum class ReportStyle { kPerTag, kPerClass, kSummary };
ReportStyle parse_report_style(std::string_view name);

struct RenderedReport {
  std::string text;   // aligned table, ratios as percentages with 2 decimals
  std::string table;  // TSV with full-precision ratios
};

RenderedReport render_report(const EvalReport& report, ReportStyle style);

// Flat `key=value` lines: phrase.<cls>.{tp,predicted,gold,precision,recall,f1},
// word.<label>.{...}, phrase.total.*, word.total.*, plus tagset description.
// Ratios with a zero denominator are written as 0 with a sibling
// `<key>.undefined=1` line.
std::string metrics_text(const EvalReport& report, const std::string& prefix = {});
// Rebuilds a report from the counts in metrics_text output.
EvalReport parse_metrics(std::string_view text, const std::string& prefix = {});

}  // namespace seqtag
