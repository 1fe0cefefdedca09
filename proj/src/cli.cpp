#include "seqtag/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>

#include "seqtag/checkpoint.hpp"
#include "seqtag/corpus.hpp"
#include "seqtag/error.hpp"
#include "seqtag/evaluator.hpp"
#include "seqtag/rng.hpp"
#include "seqtag/text.hpp"
#include "seqtag/tokenizer.hpp"
#include "seqtag/trainer.hpp"

namespace seqtag {

namespace {

namespace fs = std::filesystem;

struct TagsetFlags {
  std::string name = "peyma";
  std::string file;

  void add(CLI::App* cmd) {
    cmd->add_option("--tagset", name, "Built-in tagset: peyma or arman")->capture_default_str();
    cmd->add_option("--tagset-file", file, "Tagset file, one class per line (overrides --tagset)");
  }
  Tagset resolve() const { return file.empty() ? Tagset::builtin(name) : Tagset::from_file(file); }
};

// Hyperparameter flags generated from TrainConfig keys (--batch-size, ...).
struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;

  void add(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value configuration file");
    for (const auto& key : TrainConfig::keys()) {
      std::string flag = "--" + key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      cmd->add_option(flag, values[key], "Override config key '" + key + "'");
    }
  }

  // Defaults < SEQTAG_SEED < --config file < flags.
  TrainConfig resolve() const {
    TrainConfig c;
    if (const char* env = std::getenv("SEQTAG_SEED"); env != nullptr && *env != '\0')
      c.seed = parse_uint(env, "SEQTAG_SEED");
    if (!config_path.empty()) c.merge_text(read_file(config_path));
    for (const auto& [key, value] : values)
      if (!value.empty()) c.set(key, value);
    c.validate();
    return c;
  }
};

ParseOptions parse_options(bool repair) { return ParseOptions{repair}; }

OrphanPolicy parse_orphan(const std::string& s) {
  if (s == "open") return OrphanPolicy::kOpen;
  if (s == "drop") return OrphanPolicy::kDrop;
  throw usage_error("BadFlag", "--orphan must be 'open' or 'drop'");
}

void write_or_print(const std::string& path, const std::string& contents, std::ostream& out) {
  if (path.empty() || path == "-") out << contents;
  else write_file(path, contents);
}

std::string history_table(const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out << "epoch\ttrain_loss\tdev_phrase_f1\tdev_word_f1\n";
  for (const auto& h : history)
    out << h.epoch << '\t' << format_double(h.train_loss) << '\t' << format_double(h.dev_phrase_f1) << '\t'
        << format_double(h.dev_word_f1) << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------

int cmd_bpe_train(const std::vector<std::string>& inputs, const TagsetFlags& tags, std::size_t vocab_size,
                  const std::string& vocab_out, const std::string& merges_out, std::ostream& out) {
  const Tagset ts = tags.resolve();
  std::map<std::string, std::size_t> counts;
  for (const auto& path : inputs)
    for (const auto& [w, n] : word_counts(read_conll(path, ts))) counts[w] += n;
  const MergeTable table = train_bpe(counts, vocab_size);
  table.save(vocab_out, merges_out);
  out << "vocab_size: " << table.vocab_size() << "\nmerges: " << table.merges().size() << '\n';
  return 0;
}

int cmd_split(const std::string& input, const TagsetFlags& tags, std::size_t k, std::uint64_t seed,
              const std::string& out_dir, const std::string& prefix, std::ostream& out) {
  const Corpus corpus = read_conll(input, tags.resolve());
  const FoldSplit split = split_kfold(corpus, k, seed);
  fs::create_directories(out_dir);
  for (std::size_t f = 0; f < k; ++f) {
    const Corpus fold = subset(corpus, split.members(f));
    const fs::path path = fs::path(out_dir) / (prefix + "_" + std::to_string(f) + ".conll");
    write_file(path, to_conll(fold));
    out << path.string() << '\t' << fold.size() << '\n';
  }
  return 0;
}

int cmd_stats(const std::string& input, const TagsetFlags& tags, bool repair, const std::string& table_path,
              std::ostream& out) {
  const Tagset ts = tags.resolve();
  const Corpus raw = read_conll(input, ts);
  std::size_t violations = 0;
  for (const auto& s : raw.sentences) violations += validate_bio(s, ts).size();
  const Corpus corpus = repair ? read_conll(input, ts, parse_options(true)) : raw;
  const ClassDistribution dist = class_distribution(corpus);
  out << render_distribution(dist, corpus);
  out << "bio_violations: " << violations << (repair ? " (repaired)" : "") << '\n';
  const std::string table = distribution_table(dist, ts);
  if (table_path.empty()) out << '\n' << table;
  else write_file(table_path, table);
  return 0;
}

struct TrainArgs {
  std::string train_path, dev_path, vocab_path, merges_path, out_path;
  std::string checkpoint_dir, resume_path, metrics_path, history_path;
  bool repair = false;
};

int cmd_train(const TrainArgs& a, const TagsetFlags& tags, const ConfigFlags& flags, std::ostream& out,
              std::ostream& err) {
  const TrainConfig config = flags.resolve();
  const Tagset ts = tags.resolve();
  const Corpus all = read_conll(a.train_path, ts, parse_options(a.repair));
  Corpus fit = all, dev;
  if (!a.dev_path.empty()) {
    dev = read_conll(a.dev_path, ts, parse_options(a.repair));
  } else {
    // Same rule as cross-validation, on its own seed stream.
    std::vector<std::size_t> pool(all.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    const DevSplit d = carve_dev(pool, config.dev_fraction, derive_seed(config.seed, {0xDE7, 0xFFFF}));
    dev = subset(all, d.dev);
    fit = subset(all, d.fit);
    err << "dev: carved " << dev.size() << " of " << all.size() << " training sentences\n";
  }

  MergeTable merges;
  if (!a.vocab_path.empty() || !a.merges_path.empty()) {
    if (a.vocab_path.empty() || a.merges_path.empty())
      throw usage_error("BadFlag", "--vocab and --merges must be given together");
    merges = MergeTable::load(a.vocab_path, a.merges_path);
  } else {
    merges = train_bpe(word_counts(fit), config.bpe_vocab_size);
  }

  std::optional<Checkpoint> resume;
  TrainOptions opts;
  opts.log = &err;
  if (!a.resume_path.empty()) {
    resume = load_checkpoint(a.resume_path);
    opts.resume = &*resume;
  }
  if (!a.checkpoint_dir.empty()) {
    fs::create_directories(a.checkpoint_dir);
    const fs::path snap = fs::path(a.checkpoint_dir) / "last.ckpt";
    opts.on_epoch_end = [snap](const Checkpoint& ck) { save_checkpoint(ck, snap); };
  }
  const Checkpoint ck = train(fit, dev, merges, config, opts);
  save_checkpoint(ck, a.out_path);

  const EvalReport report = evaluate_model(ck.model, dev);
  out << "best_epoch: " << ck.best_epoch << "\nepochs_run: " << ck.epochs_completed << '\n';
  out << render_report(report, ReportStyle::kSummary).text;
  if (!a.metrics_path.empty()) write_file(a.metrics_path, metrics_text(report));
  if (!a.history_path.empty()) write_file(a.history_path, history_table(ck.history));
  return 0;
}

int cmd_cv(const std::string& input, std::size_t k, const TagsetFlags& tags, const ConfigFlags& flags,
           const std::string& vocab_path, const std::string& merges_path, const std::string& out_dir,
           const std::string& style, bool repair, std::ostream& out, std::ostream& err) {
  const TrainConfig config = flags.resolve();
  const ReportStyle rs = parse_report_style(style);
  const Corpus corpus = read_conll(input, tags.resolve(), parse_options(repair));
  std::optional<MergeTable> merges;
  if (!vocab_path.empty()) merges = MergeTable::load(vocab_path, merges_path);
  const CvResult cv = cross_validate(corpus, k, config, merges ? &*merges : nullptr, &err);
  if (!out_dir.empty()) fs::create_directories(out_dir);
  for (const auto& f : cv.folds) {
    out << "== fold " << f.fold + 1 << " (train " << f.train_size << ", dev " << f.dev_size << ", test "
        << f.test_size << ", best epoch " << f.best_epoch << ") ==\n";
    out << render_report(f.report, ReportStyle::kSummary).text;
    if (!out_dir.empty())
      write_file(fs::path(out_dir) / ("fold_" + std::to_string(f.fold) + ".metrics"), metrics_text(f.report));
  }
  out << "== pooled ==\n" << render_report(cv.pooled, rs).text;
  if (!out_dir.empty()) write_file(fs::path(out_dir) / "pooled.metrics", metrics_text(cv.pooled));
  return 0;
}

int cmd_predict(const std::string& model_path, const std::string& input, const std::string& out_path,
                std::size_t threads, std::ostream& out, std::ostream& err) {
  Checkpoint ck = load_checkpoint(model_path);
  ck.model.config.threads = std::max<std::size_t>(1, threads);
  const auto sentences = read_tokens(input);
  std::string result;
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    const auto& toks = sentences[s].tokens;
    std::vector<LabelId> tags;
    try {
      const SentencePrediction p = predict_tokens(ck.model, toks);
      tags = p.tags;
      if (p.dropped_words > 0)
        err << "warning: sentence " << s << " (line " << sentences[s].line << ") truncated; "
            << p.dropped_words << " trailing word(s) tagged O\n";
    } catch (const Error& e) {
      if (e.code() != "WordTooLong") throw;
      err << "warning: sentence " << s << " (line " << sentences[s].line << ") skipped: " << e.what() << '\n';
      tags.assign(toks.size(), Tagset::outside());
    }
    for (std::size_t i = 0; i < toks.size(); ++i)
      result += toks[i] + "\t" + ck.model.tagset.label_name(tags[i]) + "\n";
    result += "\n";
  }
  write_or_print(out_path, result, out);
  return 0;
}

int cmd_eval(const std::vector<std::string>& gold, const std::vector<std::string>& pred,
             const TagsetFlags& tags, const std::string& style, const std::string& orphan,
             const std::string& metrics_path, const std::string& table_path, std::ostream& out) {
  if (gold.size() != pred.size())
    throw usage_error("BadFlag", "--gold and --pred must be given the same number of times");
  const Tagset ts = tags.resolve();
  const ReportStyle rs = parse_report_style(style);
  const OrphanPolicy policy = parse_orphan(orphan);
  std::string metrics, tables;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const EvalReport r = evaluate_corpora(read_conll(gold[i], ts), read_conll(pred[i], ts), policy);
    const RenderedReport rendered = render_report(r, rs);
    if (gold.size() > 1) out << "== " << pred[i] << " ==\n";
    out << rendered.text;
    const std::string prefix = gold.size() > 1 ? "test" + std::to_string(i + 1) + "." : "";
    metrics += metrics_text(r, prefix);
    tables += rendered.table;
  }
  if (!metrics_path.empty()) write_file(metrics_path, metrics);
  if (!table_path.empty()) write_file(table_path, tables);
  return 0;
}

int cmd_report(const std::string& metrics_path, const std::string& prefix, const std::string& style,
               const std::string& table_path, std::ostream& out) {
  const EvalReport r = parse_metrics(read_file(metrics_path), prefix);
  const RenderedReport rendered = render_report(r, parse_report_style(style));
  out << rendered.text;
  if (!table_path.empty()) write_file(table_path, rendered.table);
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"seqtag: subword CRF sequence labeling with CoNLL evaluation"};
  app.name("seqtag");
  app.require_subcommand(1, 1);

  // bpe-train
  auto* bpe = app.add_subcommand("bpe-train", "Train a BPE subword vocabulary on CoNLL corpora");
  std::vector<std::string> bpe_in;
  std::size_t bpe_size = 1000;
  std::string bpe_vocab, bpe_merges;
  TagsetFlags bpe_tags;
  bpe->add_option("--in", bpe_in, "CoNLL training files")->required();
  bpe->add_option("--vocab-size", bpe_size, "Target vocabulary size")->capture_default_str();
  bpe->add_option("--out-vocab", bpe_vocab, "Vocabulary output path")->required();
  bpe->add_option("--out-merges", bpe_merges, "Merges output path")->required();
  bpe_tags.add(bpe);

  // split
  auto* split = app.add_subcommand("split", "Split a corpus into k folds");
  std::string split_in, split_dir = ".", split_prefix = "fold";
  std::size_t split_k = 5;
  std::uint64_t split_seed = kDefaultSeed;
  if (const char* env = std::getenv("SEQTAG_SEED"); env != nullptr && *env != '\0')
    split_seed = parse_uint(env, "SEQTAG_SEED");
  TagsetFlags split_tags;
  split->add_option("--in", split_in, "CoNLL corpus")->required();
  split->add_option("--k", split_k, "Number of folds")->capture_default_str();
  split->add_option("--seed", split_seed, "Shuffle seed")->capture_default_str();
  split->add_option("--out-dir", split_dir, "Output directory")->capture_default_str();
  split->add_option("--prefix", split_prefix, "Fold file prefix")->capture_default_str();
  split_tags.add(split);

  // stats
  auto* stats = app.add_subcommand("stats", "Corpus and class-distribution statistics");
  std::string stats_in, stats_table;
  bool stats_repair = false;
  TagsetFlags stats_tags;
  stats->add_option("--in", stats_in, "CoNLL corpus")->required();
  stats->add_option("--table", stats_table, "Write the per-class TSV here instead of stdout");
  stats->add_flag("--repair", stats_repair, "Rewrite orphan I- tags to B- before counting");
  stats_tags.add(stats);

  // train
  auto* trn = app.add_subcommand("train", "Train a model");
  TrainArgs targs;
  TagsetFlags train_tags;
  ConfigFlags train_cfg;
  trn->add_option("--train", targs.train_path, "Training CoNLL file")->required();
  trn->add_option("--dev", targs.dev_path, "Development CoNLL file (default: carved from --train)");
  trn->add_option("--vocab", targs.vocab_path, "Subword vocabulary (default: train BPE on --train)");
  trn->add_option("--merges", targs.merges_path, "Subword merges");
  trn->add_option("--out", targs.out_path, "Checkpoint output path")->required();
  trn->add_option("--checkpoint-dir", targs.checkpoint_dir, "Write a resumable snapshot after every epoch");
  trn->add_option("--resume", targs.resume_path, "Resume from a snapshot");
  trn->add_option("--metrics", targs.metrics_path, "Dev metrics output path");
  trn->add_option("--history", targs.history_path, "Per-epoch history TSV output path");
  trn->add_flag("--repair", targs.repair, "Rewrite orphan I- tags to B- while reading");
  train_tags.add(trn);
  train_cfg.add(trn);

  // cv
  auto* cv = app.add_subcommand("cv", "k-fold cross-validation");
  std::string cv_in, cv_vocab, cv_merges, cv_dir, cv_style = "per-tag";
  std::size_t cv_k = 5;
  bool cv_repair = false;
  TagsetFlags cv_tags;
  ConfigFlags cv_cfg;
  cv->add_option("--in", cv_in, "CoNLL corpus")->required();
  cv->add_option("--k", cv_k, "Number of folds")->capture_default_str();
  cv->add_option("--vocab", cv_vocab, "Shared subword vocabulary (default: trained per fold)");
  cv->add_option("--merges", cv_merges, "Shared subword merges");
  cv->add_option("--out-dir", cv_dir, "Write per-fold and pooled metrics here");
  cv->add_option("--style", cv_style, "Pooled report style")->capture_default_str();
  cv->add_flag("--repair", cv_repair, "Rewrite orphan I- tags to B- while reading");
  cv_tags.add(cv);
  cv_cfg.add(cv);

  // predict
  auto* pred = app.add_subcommand("predict", "Tag tokenized text with a trained model");
  std::string pred_model, pred_in, pred_out;
  std::size_t pred_threads = 1;
  pred->add_option("--model", pred_model, "Checkpoint")->required();
  pred->add_option("--in", pred_in, "One token per line (extra columns ignored)")->required();
  pred->add_option("--out", pred_out, "Output CoNLL path (default: stdout)");
  pred->add_option("--threads", pred_threads, "Worker threads")->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "Score predictions against gold");
  std::vector<std::string> ev_gold, ev_pred;
  std::string ev_style = "per-tag", ev_orphan = "open", ev_metrics, ev_table;
  TagsetFlags ev_tags;
  ev->add_option("--gold", ev_gold, "Gold CoNLL file (repeatable)")->required();
  ev->add_option("--pred", ev_pred, "Predicted CoNLL file (repeatable)")->required();
  ev->add_option("--style", ev_style, "per-tag, per-class or summary")->capture_default_str();
  ev->add_option("--orphan", ev_orphan, "Orphan I- handling: open or drop")->capture_default_str();
  ev->add_option("--metrics", ev_metrics, "Flat key=value metrics output path");
  ev->add_option("--table", ev_table, "Machine-readable TSV output path");
  ev_tags.add(ev);

  // report
  auto* rep = app.add_subcommand("report", "Render a saved metrics file");
  std::string rep_metrics, rep_prefix, rep_style = "per-tag", rep_table;
  rep->add_option("--metrics", rep_metrics, "Metrics file written by eval/train/cv")->required();
  rep->add_option("--prefix", rep_prefix, "Key prefix selecting one section, e.g. test2.");
  rep->add_option("--style", rep_style, "per-tag, per-class or summary")->capture_default_str();
  rep->add_option("--table", rep_table, "Machine-readable TSV output path");

  std::vector<std::string> argv_store = {"seqtag"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::kUsage);
  }

  try {
    if (bpe->parsed()) return cmd_bpe_train(bpe_in, bpe_tags, bpe_size, bpe_vocab, bpe_merges, out);
    if (split->parsed()) return cmd_split(split_in, split_tags, split_k, split_seed, split_dir, split_prefix, out);
    if (stats->parsed()) return cmd_stats(stats_in, stats_tags, stats_repair, stats_table, out);
    if (trn->parsed()) return cmd_train(targs, train_tags, train_cfg, out, err);
    if (cv->parsed())
      return cmd_cv(cv_in, cv_k, cv_tags, cv_cfg, cv_vocab, cv_merges, cv_dir, cv_style, cv_repair, out, err);
    if (pred->parsed()) return cmd_predict(pred_model, pred_in, pred_out, pred_threads, out, err);
    if (ev->parsed()) return cmd_eval(ev_gold, ev_pred, ev_tags, ev_style, ev_orphan, ev_metrics, ev_table, out);
    if (rep->parsed()) return cmd_report(rep_metrics, rep_prefix, rep_style, rep_table, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: IoError: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::kData);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::kRuntime);
  }
  return static_cast<int>(ErrorKind::kUsage);
}

}  // namespace seqtag
