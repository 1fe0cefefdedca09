#include "seqtag/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "seqtag/error.hpp"
#include "seqtag/rng.hpp"

namespace seqtag {

namespace {

bool has_whitespace(std::string_view s) {
  return s.find_first_of(" \t\r\n\v\f") != std::string_view::npos;
}

bool is_blank(std::string_view line) {
  return line.find_first_not_of(" \t") == std::string_view::npos;
}

// Splits text into lines, dropping a trailing '\r' from each.
std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = end + 1;
  }
  return lines;
}

std::vector<std::string_view> split_columns(std::string_view line) {
  const char sep = line.find('\t') != std::string_view::npos ? '\t' : ' ';
  std::vector<std::string_view> cols;
  std::size_t pos = 0;
  while (true) {
    std::size_t end = line.find(sep, pos);
    if (end == std::string_view::npos) {
      cols.push_back(line.substr(pos));
      break;
    }
    cols.push_back(line.substr(pos, end - pos));
    pos = end + 1;
  }
  return cols;
}

bool is_docstart(std::string_view line) { return line.starts_with("-DOCSTART-"); }

}  // namespace

// ---------------------------------------------------------------------------
// Tagset

Tagset::Tagset(std::string name, std::vector<std::string> classes,
               std::vector<std::string> display_names)
    : name_(std::move(name)), classes_(std::move(classes)), display_(std::move(display_names)) {
  if (classes_.empty()) throw usage_error("BadTagset", "tagset '" + name_ + "' has no classes");
  std::set<std::string> seen;
  for (const auto& c : classes_) {
    if (c.empty() || has_whitespace(c))
      throw usage_error("BadTagset", "invalid class name '" + c + "'");
    if (!seen.insert(c).second) throw usage_error("BadTagset", "duplicate class '" + c + "'");
  }
  if (display_.empty()) display_ = classes_;
  if (display_.size() != classes_.size())
    throw usage_error("BadTagset", "display name count differs from class count");
}

Tagset::Tagset() : Tagset(peyma()) {}

Tagset Tagset::peyma() {
  return Tagset("peyma", {"DAT", "LOC", "MON", "ORG", "PCT", "PER", "TIM"},
                {"Date", "Location", "Money", "Organization", "Percent", "Person", "Time"});
}

Tagset Tagset::arman() {
  return Tagset("arman", {"event", "fac", "loc", "org", "pers", "pro"},
                {"Event", "Facility", "Location", "Organization", "Person", "Product"});
}

Tagset Tagset::builtin(std::string_view name) {
  if (name == "peyma") return peyma();
  if (name == "arman") return arman();
  throw usage_error("UnknownTagset", "no built-in tagset named '" + std::string(name) +
                                         "' (expected peyma or arman)");
}

Tagset Tagset::from_file(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::vector<std::string> classes;
  for (auto line : split_lines(text)) {
    if (is_blank(line)) continue;
    const auto first = line.find_first_not_of(" \t");
    const auto last = line.find_last_not_of(" \t");
    classes.emplace_back(line.substr(first, last - first + 1));
  }
  return Tagset(path.stem().string(), std::move(classes));
}

std::optional<LabelId> Tagset::find(std::string_view label) const {
  if (label == "O") return outside();
  if (label.size() < 3 || label[1] != '-') return std::nullopt;
  const auto cls = find_class(label.substr(2));
  if (!cls) return std::nullopt;
  if (label[0] == 'B') return begin_of(*cls);
  if (label[0] == 'I') return inside_of(*cls);
  return std::nullopt;
}

std::optional<std::size_t> Tagset::find_class(std::string_view cls) const {
  for (std::size_t i = 0; i < classes_.size(); ++i)
    if (classes_[i] == cls) return i;
  return std::nullopt;
}

std::string Tagset::label_name(LabelId l) const {
  if (l == outside()) return "O";
  if (l == x_label()) return "X";
  if (l < 0 || l > x_label()) return "<invalid:" + std::to_string(l) + ">";
  return (is_begin(l) ? "B-" : "I-") + classes_[class_of(l)];
}

// ---------------------------------------------------------------------------
// Parsing and serialization

std::size_t Corpus::token_count() const {
  std::size_t n = 0;
  for (const auto& s : sentences) n += s.size();
  return n;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("IoError", "cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("IoError", "cannot write '" + path.string() + "'");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw data_error("IoError", "write failed for '" + path.string() + "'");
}

Corpus parse_conll(std::string_view text, const Tagset& tagset, std::string source_name,
                   ParseOptions options) {
  Corpus corpus{tagset, {}, std::move(source_name)};
  TaggedSentence current;
  const auto flush = [&] {
    if (current.tokens.empty()) return;
    if (options.repair) repair_bio(current.tags, tagset);
    corpus.sentences.push_back(std::move(current));
    current = TaggedSentence{};
  };

  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    const auto line = lines[i];
    if (is_blank(line)) {
      flush();
      continue;
    }
    if (is_docstart(line)) continue;
    const auto cols = split_columns(line);
    if (cols.size() != 2 || cols[0].empty() || cols[1].empty())
      throw LineError("MalformedLine", line_no,
                      "expected 'token<TAB>tag', got " + std::to_string(cols.size()) + " column(s)");
    const auto tag = tagset.find(cols[1]);
    if (!tag) throw LineError("UnknownTag", line_no, "tag '" + std::string(cols[1]) +
                                                         "' is not in tagset '" + tagset.name() + "'");
    if (current.tokens.empty()) current.line = line_no;
    current.tokens.emplace_back(cols[0]);
    current.tags.push_back(*tag);
  }
  flush();
  if (corpus.sentences.empty())
    throw data_error("EmptyCorpus", "no sentences in '" + corpus.source_name + "'");
  return corpus;
}

Corpus read_conll(const std::filesystem::path& path, const Tagset& tagset, ParseOptions options) {
  const std::string text = read_file(path);
  try {
    return parse_conll(text, tagset, path.string(), options);
  } catch (const LineError& e) {
    throw LineError(e.code(), e.line(), std::string("in '") + path.string() + "': " + e.what());
  }
}

std::vector<TokenSentence> parse_tokens(std::string_view text) {
  std::vector<TokenSentence> out;
  TokenSentence current;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = lines[i];
    if (is_blank(line)) {
      if (!current.tokens.empty()) out.push_back(std::move(current));
      current = TokenSentence{};
      continue;
    }
    if (is_docstart(line)) continue;
    const auto cols = split_columns(line);
    if (cols[0].empty()) throw LineError("MalformedLine", i + 1, "empty token column");
    if (current.tokens.empty()) current.line = i + 1;
    current.tokens.emplace_back(cols[0]);
  }
  if (!current.tokens.empty()) out.push_back(std::move(current));
  return out;
}

std::vector<TokenSentence> read_tokens(const std::filesystem::path& path) {
  return parse_tokens(read_file(path));
}

std::string to_conll(const Corpus& corpus) {
  std::string out;
  for (const auto& s : corpus.sentences) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      out += s.tokens[i];
      out += '\t';
      out += corpus.tagset.label_name(s.tags[i]);
      out += '\n';
    }
    out += '\n';
  }
  return out;
}

std::string to_conll(const std::vector<std::vector<std::string>>& tokens,
                     const std::vector<std::vector<LabelId>>& tags, const Tagset& tagset) {
  std::string out;
  for (std::size_t s = 0; s < tokens.size(); ++s) {
    for (std::size_t i = 0; i < tokens[s].size(); ++i) {
      out += tokens[s][i];
      out += '\t';
      out += tagset.label_name(tags[s][i]);
      out += '\n';
    }
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// BIO validation

std::vector<Violation> validate_bio(const std::vector<LabelId>& tags, const Tagset& tagset) {
  std::vector<Violation> out;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (!tagset.is_inside(tags[i])) continue;
    const std::size_t cls = Tagset::class_of(tags[i]);
    const bool continues = i > 0 && (tags[i - 1] == Tagset::begin_of(cls) ||
                                     tags[i - 1] == Tagset::inside_of(cls));
    if (!continues) out.push_back({i, tags[i]});
  }
  return out;
}

std::vector<Violation> validate_bio(const TaggedSentence& sentence, const Tagset& tagset) {
  return validate_bio(sentence.tags, tagset);
}

std::size_t repair_bio(std::vector<LabelId>& tags, const Tagset& tagset) {
  const auto violations = validate_bio(tags, tagset);
  for (const auto& v : violations) tags[v.position] = Tagset::begin_of(Tagset::class_of(v.tag));
  return violations.size();
}

// ---------------------------------------------------------------------------
// Folds

std::vector<std::size_t> FoldSplit::fold_sizes() const {
  std::vector<std::size_t> sizes(k, 0);
  for (auto f : assignment) ++sizes[f];
  return sizes;
}

std::vector<std::size_t> FoldSplit::members(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] == fold) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldSplit::complement(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] != fold) out.push_back(i);
  return out;
}

FoldSplit split_kfold(std::size_t sentence_count, std::size_t k, std::uint64_t seed) {
  if (k < 2 || k > sentence_count)
    throw usage_error("BadK", "k=" + std::to_string(k) + " must lie in [2, " +
                                  std::to_string(sentence_count) + "]");
  std::vector<std::size_t> order(sentence_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));

  FoldSplit split{k, seed, std::vector<std::size_t>(sentence_count)};
  for (std::size_t pos = 0; pos < order.size(); ++pos) split.assignment[order[pos]] = pos % k;
  return split;
}

FoldSplit split_kfold(const Corpus& corpus, std::size_t k, std::uint64_t seed) {
  return split_kfold(corpus.size(), k, seed);
}

Corpus subset(const Corpus& corpus, const std::vector<std::size_t>& indices) {
  Corpus out{corpus.tagset, {}, corpus.source_name};
  out.sentences.reserve(indices.size());
  for (auto i : indices) out.sentences.push_back(corpus.sentences.at(i));
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

ClassDistribution class_distribution(const Corpus& corpus) {
  ClassDistribution dist;
  const auto& ts = corpus.tagset;
  dist.total_sentences = corpus.size();
  for (const auto& s : corpus.sentences) {
    dist.total_tokens += s.size();
    std::optional<std::size_t> open;  // class of the phrase being extended
    for (LabelId tag : s.tags) {
      if (ts.is_begin(tag)) {
        open = Tagset::class_of(tag);
        const auto& name = ts.classes()[*open];
        ++dist.phrases[name];
        ++dist.phrase_tokens[name];
      } else if (ts.is_inside(tag) && open && Tagset::class_of(tag) == *open) {
        ++dist.phrase_tokens[ts.classes()[*open]];
      } else {
        open.reset();
      }
    }
  }
  return dist;
}

std::string render_distribution(const ClassDistribution& dist, const Corpus& corpus) {
  std::ostringstream out;
  out << "source: " << corpus.source_name << '\n';
  out << "tagset: " << corpus.tagset.name() << '\n';
  out << "sentences: " << dist.total_sentences << '\n';
  out << "tokens: " << dist.total_tokens << '\n';
  std::size_t phrase_total = 0, entity_tokens = 0;
  for (const auto& [cls, n] : dist.phrases) phrase_total += n;
  for (const auto& [cls, n] : dist.phrase_tokens) entity_tokens += n;
  out << "phrases: " << phrase_total << '\n';
  out << "entity_tokens: " << entity_tokens << '\n';
  for (const auto& cls : corpus.tagset.classes()) {
    const auto it = dist.phrases.find(cls);
    out << "phrases." << cls << ": " << (it == dist.phrases.end() ? 0 : it->second) << '\n';
  }
  return out.str();
}

std::string distribution_table(const ClassDistribution& dist, const Tagset& tagset) {
  std::ostringstream out;
  out << "class\tphrase_count\ttoken_count\n";
  for (const auto& cls : tagset.classes()) {
    const auto p = dist.phrases.find(cls);
    const auto t = dist.phrase_tokens.find(cls);
    out << cls << '\t' << (p == dist.phrases.end() ? 0 : p->second) << '\t'
        << (t == dist.phrase_tokens.end() ? 0 : t->second) << '\n';
  }
  return out.str();
}

}  // namespace seqtag
