#pragma once

// Byte-pair-encoding subword tokenizer and word-to-subword label alignment.
//
// Symbols are Unicode code points. A word's first symbol is stored bare and
// every later symbol carries the "##" continuation prefix, so "abc" starts
// as [a, ##b, ##c]. Merging (l, r) produces l followed by r without its
// prefix: (a, ##b) -> ab, (##b, ##c) -> ##bc.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "seqtag/corpus.hpp"

namespace seqtag {

using SubwordId = std::int32_t;

inline constexpr std::string_view kContinuationMarker = "##";

class MergeTable {
 public:
  static constexpr SubwordId kPad = 0;
  static constexpr SubwordId kUnk = 1;
  static constexpr SubwordId kBos = 2;
  static constexpr SubwordId kEos = 3;
  static constexpr std::size_t kNumSpecials = 4;

  // Specials only.
  MergeTable();
  MergeTable(std::vector<std::string> vocab, std::vector<std::pair<std::string, std::string>> merges);

  std::size_t vocab_size() const { return vocab_.size(); }
  const std::vector<std::string>& vocab() const { return vocab_; }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
  std::optional<SubwordId> id_of(std::string_view piece) const;
  const std::string& piece(SubwordId id) const { return vocab_.at(static_cast<std::size_t>(id)); }

  // Subword strings of `word` after applying every merge in rank order,
  // continuation markers included. Never empty for a nonempty word.
  std::vector<std::string> encode_pieces(std::string_view word) const;
  // Ids of encode_pieces(word); symbols outside the vocabulary map to kUnk.
  std::vector<SubwordId> encode_word(std::string_view word) const;

  // One piece per line, line index = id.
  std::string vocab_text() const;
  // One "left right" pair per line, in rank order.
  std::string merges_text() const;
  static MergeTable from_text(std::string_view vocab_text, std::string_view merges_text);

  void save(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path) const;
  static MergeTable load(const std::filesystem::path& vocab_path,
                         const std::filesystem::path& merges_path);

  bool operator==(const MergeTable& other) const {
    return vocab_ == other.vocab_ && merges_ == other.merges_;
  }

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, SubwordId> index_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::map<std::pair<std::string, std::string>, std::size_t, std::less<>> rank_;
};

// Splits UTF-8 into code points; invalid bytes become single-byte symbols.
std::vector<std::string> utf8_chars(std::string_view word);
// Marker-prefixed initial symbols of a word: [a, ##b, ##c].
std::vector<std::string> initial_symbols(std::string_view word);
// The surface text of a piece: the piece with any continuation marker removed.
std::string_view strip_marker(std::string_view piece);

// Standard BPE over a word-frequency table: repeatedly merges the most
// frequent adjacent pair (ties go to the lexicographically smallest pair)
// until the vocabulary reaches vocab_size or no pair occurs twice.
// Throws Error{VocabTooSmall} when vocab_size does not exceed the specials
// plus the distinct initial symbols.
MergeTable train_bpe(const std::map<std::string, std::size_t>& word_counts, std::size_t vocab_size);
MergeTable train_bpe(const std::vector<std::string>& words, std::size_t vocab_size);
std::map<std::string, std::size_t> word_counts(const Corpus& corpus);

inline constexpr std::int32_t kNoToken = -1;
inline constexpr std::size_t kDefaultMaxLen = 128;

struct AlignedSequence {
  std::vector<SubwordId> subword_ids;
  // Labels over the extended set; X on specials and non-initial subwords.
  std::vector<LabelId> labels;
  // Source word index of each subword, kNoToken for BOS/EOS.
  std::vector<std::int32_t> token_of;
  std::vector<std::uint8_t> attention_mask;
  // True at the first subword of each word: the CRF chain positions.
  std::vector<std::uint8_t> label_mask;
  std::size_t word_count = 0;  // words in the source sentence
  std::size_t kept_words = 0;  // words surviving truncation

  std::size_t size() const { return subword_ids.size(); }
  bool truncated() const { return kept_words < word_count; }
};

// BOS + word encodings + EOS. The first subword of word i carries tags[i];
// everything else carries X. Sequences longer than max_len are cut at a word
// boundary. Throws Error{WordTooLong} when one word needs more than
// max_len - 2 subwords, and Error{BadMaxLen} when max_len < 3.
AlignedSequence align(const std::vector<std::string>& tokens, const std::vector<LabelId>& tags,
                      const MergeTable& merges, const Tagset& tagset,
                      std::size_t max_len = kDefaultMaxLen);
AlignedSequence align(const TaggedSentence& sentence, const MergeTable& merges,
                      const Tagset& tagset, std::size_t max_len = kDefaultMaxLen);

struct ProjectedTags {
  std::vector<LabelId> tags;     // one per source word
  std::size_t coerced_x = 0;     // first-subword X predictions rewritten to O
  std::size_t dropped_words = 0; // words lost to truncation, emitted as O
};

// Word-level tags read off each word's first subword. Throws
// Error{LengthMismatch} when the prediction count differs from the sequence.
ProjectedTags project(const AlignedSequence& aligned, const std::vector<LabelId>& subword_predictions,
                   const Tagset& tagset);

}  // namespace seqtag
