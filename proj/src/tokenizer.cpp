#include "seqtag/tokenizer.hpp"

#include <algorithm>
#include <set>

#include "seqtag/error.hpp"

namespace seqtag {

namespace {

const std::vector<std::string>& special_pieces() {
  static const std::vector<std::string> pieces = {"[PAD]", "[UNK]", "[BOS]", "[EOS]"};
  return pieces;
}

std::string merged(const std::string& left, const std::string& right) {
  return left + std::string(strip_marker(right));
}

// Merges every non-overlapping occurrence of (left, right), scanning left to right.
bool apply_merge(std::vector<std::string>& symbols, const std::string& left,
                 const std::string& right) {
  bool changed = false;
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      out.push_back(merged(left, right));
      ++i;
      changed = true;
    } else {
      out.push_back(std::move(symbols[i]));
    }
  }
  symbols = std::move(out);
  return changed;
}

std::vector<std::string_view> text_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back(text.substr(pos, end - pos));
    pos = end + 1;
  }
  return lines;
}

}  // namespace

std::vector<std::string> utf8_chars(std::string_view word) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < word.size()) {
    const auto lead = static_cast<unsigned char>(word[i]);
    std::size_t len = 1;
    if ((lead & 0xE0) == 0xC0) len = 2;
    else if ((lead & 0xF0) == 0xE0) len = 3;
    else if ((lead & 0xF8) == 0xF0) len = 4;
    if (i + len > word.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(word[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    out.emplace_back(word.substr(i, len));
    i += len;
  }
  return out;
}

std::vector<std::string> initial_symbols(std::string_view word) {
  auto chars = utf8_chars(word);
  for (std::size_t i = 1; i < chars.size(); ++i) chars[i].insert(0, kContinuationMarker);
  return chars;
}

std::string_view strip_marker(std::string_view piece) {
  if (piece.size() > kContinuationMarker.size() && piece.starts_with(kContinuationMarker))
    piece.remove_prefix(kContinuationMarker.size());
  return piece;
}

// ---------------------------------------------------------------------------
// MergeTable

MergeTable::MergeTable() : MergeTable(special_pieces(), {}) {}

MergeTable::MergeTable(std::vector<std::string> vocab,
                       std::vector<std::pair<std::string, std::string>> merges)
    : vocab_(std::move(vocab)), merges_(std::move(merges)) {
  if (vocab_.size() < kNumSpecials ||
      !std::equal(special_pieces().begin(), special_pieces().end(), vocab_.begin()))
    throw data_error("CorruptVocab", "vocabulary must start with [PAD] [UNK] [BOS] [EOS]");
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    if (vocab_[i].empty()) throw data_error("CorruptVocab", "empty piece at id " + std::to_string(i));
    if (!index_.emplace(vocab_[i], static_cast<SubwordId>(i)).second)
      throw data_error("CorruptVocab", "duplicate piece '" + vocab_[i] + "'");
  }
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    const auto& m = merges_[r];
    const auto out = merged(m.first, m.second);
    const auto it = index_.find(out);
    if (it == index_.end() || it->second < static_cast<SubwordId>(kNumSpecials))
      throw data_error("CorruptMerges", "merge output '" + out + "' missing from vocabulary");
    rank_.emplace(m, r);
  }
}

std::optional<SubwordId> MergeTable::id_of(std::string_view piece) const {
  const auto it = index_.find(std::string(piece));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> MergeTable::encode_pieces(std::string_view word) const {
  auto symbols = initial_symbols(word);
  while (symbols.size() > 1) {
    std::size_t best_rank = merges_.size();
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      const auto it = rank_.find(std::pair<std::string, std::string>(symbols[i], symbols[i + 1]));
      if (it != rank_.end()) best_rank = std::min(best_rank, it->second);
    }
    if (best_rank == merges_.size()) break;
    apply_merge(symbols, merges_[best_rank].first, merges_[best_rank].second);
  }
  return symbols;
}

std::vector<SubwordId> MergeTable::encode_word(std::string_view word) const {
  std::vector<SubwordId> ids;
  for (const auto& p : encode_pieces(word)) ids.push_back(id_of(p).value_or(kUnk));
  return ids;
}

std::string MergeTable::vocab_text() const {
  std::string out;
  for (const auto& p : vocab_) {
    out += p;
    out += '\n';
  }
  return out;
}

std::string MergeTable::merges_text() const {
  std::string out;
  for (const auto& [l, r] : merges_) {
    out += l;
    out += ' ';
    out += r;
    out += '\n';
  }
  return out;
}

MergeTable MergeTable::from_text(std::string_view vocab_text, std::string_view merges_text) {
  std::vector<std::string> vocab;
  for (auto line : text_lines(vocab_text)) vocab.emplace_back(line);
  std::vector<std::pair<std::string, std::string>> merges;
  std::size_t line_no = 0;
  for (auto line : text_lines(merges_text)) {
    ++line_no;
    const auto sp = line.find(' ');
    if (sp == std::string_view::npos || sp == 0 || sp + 1 == line.size() ||
        line.find(' ', sp + 1) != std::string_view::npos)
      throw LineError("CorruptMerges", line_no, "expected 'left right'");
    merges.emplace_back(std::string(line.substr(0, sp)), std::string(line.substr(sp + 1)));
  }
  return MergeTable(std::move(vocab), std::move(merges));
}

void MergeTable::save(const std::filesystem::path& vocab_path,
                      const std::filesystem::path& merges_path) const {
  write_file(vocab_path, vocab_text());
  write_file(merges_path, merges_text());
}

MergeTable MergeTable::load(const std::filesystem::path& vocab_path,
                            const std::filesystem::path& merges_path) {
  return from_text(read_file(vocab_path), read_file(merges_path));
}

// ---------------------------------------------------------------------------
// Training

MergeTable train_bpe(const std::map<std::string, std::size_t>& word_counts, std::size_t vocab_size) {
  struct WordState {
    std::vector<std::string> symbols;
    std::size_t count;
  };
  std::vector<WordState> words;
  std::set<std::string> alphabet;
  for (const auto& [w, n] : word_counts) {
    if (w.empty() || n == 0) continue;
    words.push_back({initial_symbols(w), n});
    alphabet.insert(words.back().symbols.begin(), words.back().symbols.end());
  }
  if (vocab_size <= MergeTable::kNumSpecials + alphabet.size())
    throw usage_error("VocabTooSmall", "vocab_size " + std::to_string(vocab_size) +
                                           " must exceed " + std::to_string(MergeTable::kNumSpecials) +
                                           " specials + " + std::to_string(alphabet.size()) +
                                           " base symbols");

  std::vector<std::string> vocab = special_pieces();
  std::set<std::string> in_vocab(alphabet);
  vocab.insert(vocab.end(), alphabet.begin(), alphabet.end());
  std::vector<std::pair<std::string, std::string>> merges;

  // Pair frequencies, a (-count, pair) ordered queue whose first element is
  // the most frequent and then lexicographically smallest pair, and an
  // inverted index from pair to the words that may contain it.
  using Pair = std::pair<std::string, std::string>;
  std::map<Pair, std::size_t> freq;
  std::set<std::pair<std::int64_t, Pair>> queue;
  std::map<Pair, std::set<std::size_t>> where;
  const auto bump = [&](const Pair& p, std::int64_t delta) {
    auto& n = freq[p];
    if (n > 0) queue.erase({-static_cast<std::int64_t>(n), p});
    n = static_cast<std::size_t>(static_cast<std::int64_t>(n) + delta);
    if (n > 0) queue.insert({-static_cast<std::int64_t>(n), p});
  };
  const auto contribute = [&](std::size_t wi, std::int64_t sign) {
    const auto& w = words[wi];
    for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) {
      Pair p{w.symbols[i], w.symbols[i + 1]};
      if (sign > 0) where[p].insert(wi);
      bump(p, sign * static_cast<std::int64_t>(w.count));
    }
  };
  for (std::size_t wi = 0; wi < words.size(); ++wi) contribute(wi, +1);

  while (vocab.size() < vocab_size && !queue.empty()) {
    const auto [neg_count, best] = *queue.begin();
    if (-neg_count < 2) break;
    const auto affected = where[best];
    for (std::size_t wi : affected) {
      contribute(wi, -1);
      apply_merge(words[wi].symbols, best.first, best.second);
      contribute(wi, +1);
    }
    where.erase(best);
    const auto out = merged(best.first, best.second);
    if (in_vocab.insert(out).second) vocab.push_back(out);
    merges.push_back(best);
  }
  return MergeTable(std::move(vocab), std::move(merges));
}

MergeTable train_bpe(const std::vector<std::string>& words, std::size_t vocab_size) {
  std::map<std::string, std::size_t> counts;
  for (const auto& w : words) ++counts[w];
  return train_bpe(counts, vocab_size);
}

std::map<std::string, std::size_t> word_counts(const Corpus& corpus) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : corpus.sentences)
    for (const auto& t : s.tokens) ++counts[t];
  return counts;
}

// ---------------------------------------------------------------------------
// Alignment

AlignedSequence align(const std::vector<std::string>& tokens, const std::vector<LabelId>& tags,
                      const MergeTable& merges, const Tagset& tagset, std::size_t max_len) {
  if (max_len < 3) throw usage_error("BadMaxLen", "max_len must be at least 3");
  if (tags.size() != tokens.size())
    throw runtime_error("LengthMismatch", "token and tag counts differ");
  const LabelId x = tagset.x_label();

  AlignedSequence seq;
  seq.word_count = tokens.size();
  const auto push = [&](SubwordId id, LabelId label, std::int32_t word, bool first) {
    seq.subword_ids.push_back(id);
    seq.labels.push_back(label);
    seq.token_of.push_back(word);
    seq.attention_mask.push_back(1);
    seq.label_mask.push_back(first ? 1 : 0);
  };

  push(MergeTable::kBos, x, kNoToken, false);
  for (std::size_t w = 0; w < tokens.size(); ++w) {
    const auto ids = merges.encode_word(tokens[w]);
    if (ids.size() > max_len - 2)
      throw data_error("WordTooLong", "word " + std::to_string(w) + " ('" + tokens[w] +
                                          "') needs " + std::to_string(ids.size()) +
                                          " subwords, limit " + std::to_string(max_len - 2));
    if (seq.subword_ids.size() + ids.size() + 1 > max_len) break;
    for (std::size_t k = 0; k < ids.size(); ++k)
      push(ids[k], k == 0 ? tags[w] : x, static_cast<std::int32_t>(w), k == 0);
    ++seq.kept_words;
  }
  push(MergeTable::kEos, x, kNoToken, false);
  return seq;
}

AlignedSequence align(const TaggedSentence& sentence, const MergeTable& merges,
                      const Tagset& tagset, std::size_t max_len) {
  return align(sentence.tokens, sentence.tags, merges, tagset, max_len);
}

ProjectedTags project(const AlignedSequence& aligned, const std::vector<LabelId>& subword_predictions,
                      const Tagset& tagset) {
  if (subword_predictions.size() != aligned.size())
    throw runtime_error("LengthMismatch", "got " + std::to_string(subword_predictions.size()) +
                                              " predictions for " + std::to_string(aligned.size()) +
                                              " subwords");
  ProjectedTags out;
  out.tags.assign(aligned.word_count, Tagset::outside());
  out.dropped_words = aligned.word_count - aligned.kept_words;
  for (std::size_t i = 0; i < aligned.size(); ++i) {
    if (!aligned.label_mask[i]) continue;
    LabelId p = subword_predictions[i];
    if (p == tagset.x_label() || p < 0 || p > tagset.x_label()) {
      p = Tagset::outside();
      ++out.coerced_x;
    }
    out.tags[static_cast<std::size_t>(aligned.token_of[i])] = p;
  }
  return out;
}

}  // namespace seqtag
