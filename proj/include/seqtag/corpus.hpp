#pragma once

// BIO-tagged corpora in CoNLL column format: tagsets, parsing, validation,
// k-fold splitting and class statistics.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace seqtag {

using LabelId = int;

// A BIO tagset. Label ids are laid out as
//   0 = O, 1 + 2c = B-<class c>, 2 + 2c = I-<class c>
// and the extended label set appends X at id 2|classes| + 1.
class Tagset {
 public:
  // The Peyma tagset.
  Tagset();
  Tagset(std::string name, std::vector<std::string> classes,
         std::vector<std::string> display_names = {});

  static Tagset peyma();
  static Tagset arman();
  // "peyma" or "arman".
  static Tagset builtin(std::string_view name);
  // One class name per line; blank lines ignored. Display names equal codes.
  static Tagset from_file(const std::filesystem::path& path);

  const std::string& name() const { return name_; }
  const std::vector<std::string>& classes() const { return classes_; }
  std::size_t num_classes() const { return classes_.size(); }
  // Human-readable class name used in report headers.
  const std::string& display_name(std::size_t cls) const { return display_[cls]; }

  std::size_t num_labels() const { return 2 * classes_.size() + 1; }
  std::size_t num_extended_labels() const { return num_labels() + 1; }

  static constexpr LabelId outside() { return 0; }
  LabelId x_label() const { return static_cast<LabelId>(num_labels()); }
  static constexpr LabelId begin_of(std::size_t cls) { return static_cast<LabelId>(1 + 2 * cls); }
  static constexpr LabelId inside_of(std::size_t cls) { return static_cast<LabelId>(2 + 2 * cls); }

  bool is_begin(LabelId l) const { return l > 0 && l < x_label() && l % 2 == 1; }
  bool is_inside(LabelId l) const { return l > 0 && l < x_label() && l % 2 == 0; }
  // Class index of a B-/I- label.
  static constexpr std::size_t class_of(LabelId l) { return static_cast<std::size_t>((l - 1) / 2); }

  std::optional<LabelId> find(std::string_view label) const;
  std::optional<std::size_t> find_class(std::string_view cls) const;
  // "O", "B-PER", ..., "X".
  std::string label_name(LabelId l) const;

  bool operator==(const Tagset& other) const {
    return name_ == other.name_ && classes_ == other.classes_;
  }

 private:
  std::string name_;
  std::vector<std::string> classes_;
  std::vector<std::string> display_;
};

struct TaggedSentence {
  std::vector<std::string> tokens;
  std::vector<LabelId> tags;
  // 1-based line of the first token in the source text (0 when synthetic).
  std::size_t line = 0;

  std::size_t size() const { return tokens.size(); }
};

struct Corpus {
  Tagset tagset;
  std::vector<TaggedSentence> sentences;
  std::string source_name;

  std::size_t size() const { return sentences.size(); }
  std::size_t token_count() const;
};

struct ParseOptions {
  // Convert orphan I-c tags into B-c while parsing.
  bool repair = false;
};

// Parses `token<TAB>tag` (or `token tag`) lines; blank lines end sentences.
// Throws LineError{MalformedLine, UnknownTag} or Error{EmptyCorpus}.
Corpus parse_conll(std::string_view text, const Tagset& tagset,
                   std::string source_name = {}, ParseOptions options = {});
Corpus read_conll(const std::filesystem::path& path, const Tagset& tagset,
                  ParseOptions options = {});

// Untagged input: the first column of each nonblank line is the token and
// any further columns are ignored. Empty input yields no sentences.
struct TokenSentence {
  std::vector<std::string> tokens;
  std::size_t line = 0;
};
std::vector<TokenSentence> parse_tokens(std::string_view text);
std::vector<TokenSentence> read_tokens(const std::filesystem::path& path);

// CoNLL text with TAB separators and a blank line after each sentence.
std::string to_conll(const Corpus& corpus);
std::string to_conll(const std::vector<std::vector<std::string>>& tokens,
                     const std::vector<std::vector<LabelId>>& tags,
                     const Tagset& tagset);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

struct Violation {
  std::size_t position;
  LabelId tag;
};

// Positions holding I-c whose predecessor is neither B-c nor I-c.
std::vector<Violation> validate_bio(const TaggedSentence& sentence, const Tagset& tagset);
std::vector<Violation> validate_bio(const std::vector<LabelId>& tags, const Tagset& tagset);
// Rewrites every violation to B-c (the conlleval convention). Returns the count.
std::size_t repair_bio(std::vector<LabelId>& tags, const Tagset& tagset);

struct FoldSplit {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  // Fold index of every sentence, in corpus order.
  std::vector<std::size_t> assignment;

  std::vector<std::size_t> fold_sizes() const;
  // Sentence indices of fold f, ascending.
  std::vector<std::size_t> members(std::size_t fold) const;
  // Sentence indices outside fold f, ascending.
  std::vector<std::size_t> complement(std::size_t fold) const;
};

// Shuffles sentence indices with Rng(seed) and deals them round-robin into k
// folds. Throws Error{BadK} unless 2 <= k <= n.
FoldSplit split_kfold(std::size_t sentence_count, std::size_t k, std::uint64_t seed);
FoldSplit split_kfold(const Corpus& corpus, std::size_t k, std::uint64_t seed);

Corpus subset(const Corpus& corpus, const std::vector<std::size_t>& indices);

struct ClassDistribution {
  // Only classes with at least one phrase appear.
  std::map<std::string, std::size_t> phrases;
  // Tokens covered by the counted phrases, per class.
  std::map<std::string, std::size_t> phrase_tokens;
  std::size_t total_tokens = 0;
  std::size_t total_sentences = 0;
};

ClassDistribution class_distribution(const Corpus& corpus);

// key: value lines.
std::string render_distribution(const ClassDistribution& dist, const Corpus& corpus);
// TSV with header `class\tphrase_count\ttoken_count`, one row per tagset class.
std::string distribution_table(const ClassDistribution& dist, const Tagset& tagset);

}  // namespace seqtag
