#include "seqtag/config.hpp"

#include <functional>
#include <map>
#include <sstream>

#include "seqtag/error.hpp"
#include "seqtag/text.hpp"

namespace seqtag {

namespace {

struct Field {
  std::function<void(TrainConfig&, std::string_view)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
Field size_field(T TrainConfig::*member) {
  return {[member](TrainConfig& c, std::string_view v) {
            c.*member = static_cast<T>(parse_uint(v, "config value"));
          },
          [member](const TrainConfig& c) { return std::to_string(c.*member); }};
}

Field real_field(double TrainConfig::*member) {
  return {[member](TrainConfig& c, std::string_view v) { c.*member = parse_double(v, "config value"); },
          [member](const TrainConfig& c) { return format_double(c.*member); }};
}

Field bool_field(bool TrainConfig::*member) {
  return {[member](TrainConfig& c, std::string_view v) {
            const auto t = trim(v);
            if (t == "1" || t == "true") c.*member = true;
            else if (t == "0" || t == "false") c.*member = false;
            else throw usage_error("BadNumber", "expected true/false, got '" + std::string(v) + "'");
          },
          [member](const TrainConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

// Serialized fields in output order; `threads` is settable but not serialized.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> f = {
      {"epochs", size_field(&TrainConfig::epochs)},
      {"batch_size", size_field(&TrainConfig::batch_size)},
      {"learning_rate", real_field(&TrainConfig::learning_rate)},
      {"beta1", real_field(&TrainConfig::beta1)},
      {"beta2", real_field(&TrainConfig::beta2)},
      {"epsilon", real_field(&TrainConfig::epsilon)},
      {"weight_decay", real_field(&TrainConfig::weight_decay)},
      {"grad_clip_norm", real_field(&TrainConfig::grad_clip_norm)},
      {"seed", size_field(&TrainConfig::seed)},
      {"patience", size_field(&TrainConfig::patience)},
      {"d_model", size_field(&TrainConfig::d_model)},
      {"n_heads", size_field(&TrainConfig::n_heads)},
      {"n_layers", size_field(&TrainConfig::n_layers)},
      {"d_ff", size_field(&TrainConfig::d_ff)},
      {"max_len", size_field(&TrainConfig::max_len)},
      {"dropout", real_field(&TrainConfig::dropout)},
      {"dev_fraction", real_field(&TrainConfig::dev_fraction)},
      {"bpe_vocab_size", size_field(&TrainConfig::bpe_vocab_size)},
      {"constrained_decoding", bool_field(&TrainConfig::constrained_decoding)},
  };
  return f;
}

}  // namespace

void TrainConfig::validate() const {
  const auto bad = [](const std::string& msg) { return usage_error("BadConfig", msg); };
  if (epochs == 0) throw bad("epochs must be positive");
  if (batch_size == 0) throw bad("batch_size must be at least 1");
  // Zero is accepted so that a null-update run can be expressed.
  if (!(learning_rate >= 0.0)) throw bad("learning_rate must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw bad("beta1 and beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw bad("epsilon must be positive");
  if (!(weight_decay >= 0.0)) throw bad("weight_decay must be non-negative");
  if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) throw bad("dev_fraction must lie in (0, 1)");
  if (threads == 0) throw bad("threads must be at least 1");
  encoder_config(1).validate();
}

EncoderConfig TrainConfig::encoder_config(std::size_t vocab_size) const {
  EncoderConfig e;
  e.vocab_size = vocab_size;
  e.d_model = d_model;
  e.n_heads = n_heads;
  e.n_layers = n_layers;
  e.d_ff = d_ff;
  e.max_len = max_len;
  e.dropout_rate = dropout;
  e.seed = seed;
  return e;
}

void TrainConfig::set(std::string_view key, std::string_view value) {
  const auto k = trim(key);
  if (k == "threads") {
    threads = static_cast<std::size_t>(parse_uint(value, "threads"));
    return;
  }
  for (const auto& [name, field] : fields()) {
    if (name == k) {
      field.set(*this, value);
      return;
    }
  }
  throw usage_error("UnknownKey", "unknown config key '" + std::string(k) + "'");
}

std::string TrainConfig::to_text() const {
  std::ostringstream out;
  for (const auto& [name, field] : fields()) out << name << '=' << field.get(*this) << '\n';
  return out.str();
}

void TrainConfig::merge_text(std::string_view text) {
  std::size_t line_no = 0;
  for (auto line : lines(text)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw LineError("MalformedLine", line_no, "expected key=value");
    try {
      set(line.substr(0, eq), line.substr(eq + 1));
    } catch (const Error& e) {
      throw Error(ErrorKind::kUsage, e.code(), "config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

TrainConfig TrainConfig::from_text(std::string_view text) {
  TrainConfig c;
  c.merge_text(text);
  return c;
}

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, field] : fields()) out.push_back(name);
    out.push_back("threads");
    return out;
  }();
  return k;
}

}  // namespace seqtag
