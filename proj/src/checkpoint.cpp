#include "seqtag/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>
#include <sstream>

#include "seqtag/error.hpp"
#include "seqtag/text.hpp"

namespace seqtag {

namespace {

constexpr char kMagic[8] = {'S', 'E', 'Q', 'T', 'A', 'G', 'C', 'K'};
constexpr std::size_t kHeaderSize = 8 + 4 + 8 + 8;

class Writer {
 public:
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::string_view s) { out_.append(s); }
  void str32(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  std::string take() { return std::move(out_); }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string_view bytes(std::uint64_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str32() { return std::string(bytes(u32())); }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > data_.size() - pos_) throw data_error("CorruptCheckpoint", "unexpected end of data");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

struct StoredTensor {
  std::uint64_t rows = 0, cols = 0;
  std::vector<double> values;
};

std::string joined(const std::vector<std::string>& items) {
  std::string s;
  for (const auto& i : items) s += i + "\n";
  return s;
}

std::vector<std::string> unjoined(std::string_view s) {
  std::vector<std::string> out;
  for (auto l : lines(s)) out.emplace_back(l);
  return out;
}

void add_tensors(std::vector<std::pair<std::string, TensorRef>>& out, const std::string& prefix,
                 ModelParams& p) {
  for (auto& t : p.tensors()) out.emplace_back(prefix + t.name, t);
}

void restore(ModelParams& p, const std::string& prefix, std::map<std::string, StoredTensor>& stored) {
  for (auto& t : p.tensors()) {
    const auto it = stored.find(prefix + t.name);
    if (it == stored.end()) throw data_error("CorruptCheckpoint", "missing tensor '" + prefix + t.name + "'");
    if (it->second.rows != t.rows || it->second.cols != t.cols)
      throw data_error("CorruptCheckpoint", "tensor '" + prefix + t.name + "' has shape " +
                                                std::to_string(it->second.rows) + "x" +
                                                std::to_string(it->second.cols) + ", expected " +
                                                std::to_string(t.rows) + "x" + std::to_string(t.cols));
    std::memcpy(t.data, it->second.values.data(), t.size() * sizeof(double));
  }
}

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string serialize_checkpoint(const Checkpoint& ck_in) {
  Checkpoint ck = ck_in;  // tensors() needs mutable access
  const auto& ts = ck.model.tagset;
  std::vector<std::string> display;
  for (std::size_t c = 0; c < ts.num_classes(); ++c) display.push_back(ts.display_name(c));
  std::ostringstream st;
  st << "epochs_completed=" << ck.epochs_completed << '\n'
     << "adam_step=" << ck.optimizer.step << '\n'
     << "best_epoch=" << ck.best_epoch << '\n'
     << "stale_epochs=" << ck.stale_epochs << '\n'
     << "encoder_seed=" << ck.model.encoder_config.seed << '\n'
     << "resumable=" << (ck.resumable() ? 1 : 0) << '\n';

  const std::vector<std::pair<std::string, std::string>> entries = {
      {"config", ck.model.config.to_text()},
      {"tagset.name", ts.name()},
      {"tagset.classes", joined(ts.classes())},
      {"tagset.display", joined(display)},
      {"vocab", ck.model.merges.vocab_text()},
      {"merges", ck.model.merges.merges_text()},
      {"state", st.str()},
  };

  std::vector<std::pair<std::string, TensorRef>> tensors;
  add_tensors(tensors, "model.", ck.model.params);
  add_tensors(tensors, "adam.m.", ck.optimizer.first_moment);
  add_tensors(tensors, "adam.v.", ck.optimizer.second_moment);
  if (ck.best) add_tensors(tensors, "best.", *ck.best);
  Matrix history(static_cast<Eigen::Index>(ck.history.size()), 4);
  for (std::size_t i = 0; i < ck.history.size(); ++i) {
    const auto& h = ck.history[i];
    history.row(static_cast<Eigen::Index>(i)) << static_cast<double>(h.epoch), h.train_loss,
        h.dev_phrase_f1, h.dev_word_f1;
  }
  Vector best_f1(1);
  best_f1(0) = ck.best_dev_f1;
  tensors.emplace_back("history", tensor_ref("history", history));
  tensors.emplace_back("state.best_dev_f1", tensor_ref("state.best_dev_f1", best_f1));

  Writer payload;
  payload.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, value] : entries) {
    payload.str32(name);
    payload.u64(value.size());
    payload.bytes(value);
  }
  payload.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    payload.str32(name);
    payload.u64(t.rows);
    payload.u64(t.cols);
    for (std::size_t i = 0; i < t.size(); ++i) payload.f64(t.data[i]);
  }
  const std::string body = payload.take();

  Writer out;
  out.bytes(std::string_view(kMagic, sizeof kMagic));
  out.u32(kCheckpointVersion);
  out.u64(body.size());
  out.u64(fnv1a64(body));
  out.bytes(body);
  return out.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < kHeaderSize || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw data_error("CorruptCheckpoint", "missing checkpoint header");
  Reader header(std::string_view(bytes).substr(sizeof kMagic, kHeaderSize - sizeof kMagic));
  const std::uint32_t version = header.u32();
  if (version != kCheckpointVersion)
    throw data_error("VersionMismatch", "checkpoint format " + std::to_string(version) +
                                            ", this build reads " + std::to_string(kCheckpointVersion));
  const std::uint64_t length = header.u64();
  const std::uint64_t checksum = header.u64();
  if (bytes.size() - kHeaderSize != length)
    throw data_error("CorruptCheckpoint", "payload is " + std::to_string(bytes.size() - kHeaderSize) +
                                              " bytes, header declares " + std::to_string(length));
  const std::string body = bytes.substr(kHeaderSize);
  if (fnv1a64(body) != checksum) throw data_error("CorruptCheckpoint", "checksum mismatch");

  Reader in(body);
  std::map<std::string, std::string> entries;
  for (std::uint32_t n = in.u32(); n > 0; --n) {
    std::string name = in.str32();
    entries[name] = std::string(in.bytes(in.u64()));
  }
  std::map<std::string, StoredTensor> stored;
  for (std::uint32_t n = in.u32(); n > 0; --n) {
    std::string name = in.str32();
    StoredTensor t;
    t.rows = in.u64();
    t.cols = in.u64();
    if (t.cols != 0 && t.rows > (body.size() / 8) / t.cols)
      throw data_error("CorruptCheckpoint", "tensor '" + name + "' larger than the file");
    t.values.resize(t.rows * t.cols);
    for (auto& v : t.values) v = in.f64();
    stored[name] = std::move(t);
  }
  if (!in.done()) throw data_error("CorruptCheckpoint", "trailing bytes after tensors");

  const auto entry = [&](const std::string& key) -> const std::string& {
    const auto it = entries.find(key);
    if (it == entries.end()) throw data_error("CorruptCheckpoint", "missing entry '" + key + "'");
    return it->second;
  };
  std::map<std::string, std::string> state;
  for (auto l : lines(entry("state"))) {
    const auto eq = l.find('=');
    if (eq != std::string_view::npos) state[std::string(l.substr(0, eq))] = std::string(l.substr(eq + 1));
  }
  const auto state_u = [&](const std::string& key) -> std::uint64_t {
    const auto it = state.find(key);
    if (it == state.end()) throw data_error("CorruptCheckpoint", "missing state '" + key + "'");
    return parse_uint(it->second, key);
  };

  Checkpoint ck;
  ck.model.tagset = Tagset(entry("tagset.name"), unjoined(entry("tagset.classes")),
                           unjoined(entry("tagset.display")));
  ck.model.merges = MergeTable::from_text(entry("vocab"), entry("merges"));
  ck.model.config = TrainConfig::from_text(entry("config"));
  ck.model.encoder_config = ck.model.config.encoder_config(ck.model.merges.vocab_size());
  ck.model.encoder_config.seed = state_u("encoder_seed");
  const std::size_t L = ck.model.tagset.num_extended_labels();
  ck.model.params = ModelParams::zeros(ck.model.encoder_config, L);
  restore(ck.model.params, "model.", stored);
  ck.optimizer.first_moment = ModelParams::zeros(ck.model.encoder_config, L);
  ck.optimizer.second_moment = ModelParams::zeros(ck.model.encoder_config, L);
  restore(ck.optimizer.first_moment, "adam.m.", stored);
  restore(ck.optimizer.second_moment, "adam.v.", stored);
  ck.optimizer.step = state_u("adam_step");
  if (state_u("resumable") != 0) {
    ck.best = ModelParams::zeros(ck.model.encoder_config, L);
    restore(*ck.best, "best.", stored);
  }
  ck.epochs_completed = state_u("epochs_completed");
  ck.best_epoch = state_u("best_epoch");
  ck.stale_epochs = state_u("stale_epochs");

  const auto hist = stored.find("history");
  const auto best = stored.find("state.best_dev_f1");
  if (hist == stored.end() || best == stored.end() || best->second.values.size() != 1 ||
      (hist->second.rows > 0 && hist->second.cols != 4))
    throw data_error("CorruptCheckpoint", "missing or malformed training history");
  for (std::uint64_t r = 0; r < hist->second.rows; ++r) {
    const double* row = hist->second.values.data() + r * 4;
    ck.history.push_back({static_cast<std::size_t>(row[0]), row[1], row[2], row[3]});
  }
  ck.best_dev_f1 = best->second.values[0];
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  write_file(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  try {
    return deserialize_checkpoint(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), e.code(), "'" + path.string() + "': " + e.what());
  }
}

}  // namespace seqtag
