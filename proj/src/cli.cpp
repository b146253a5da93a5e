#include "olens/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "olens/checkpoint.hpp"
#include "olens/config.hpp"
#include "olens/ensemble.hpp"
#include "olens/error.hpp"
#include "olens/eval.hpp"
#include "olens/training.hpp"

namespace fs = std::filesystem;

namespace olens {
namespace {

// ---------------------------------------------------------------------------
// Config-file and seed plumbing
// ---------------------------------------------------------------------------

std::uint64_t parse_seed_text(const std::string& raw, const std::string& origin) {
  if (raw.empty() || raw.find_first_not_of("0123456789") != std::string::npos)
    raise(ErrorKind::Usage, origin + " must be a non-negative integer, got '" + raw + "'");
  try {
    return std::stoull(raw);
  } catch (const std::exception&) {
    raise(ErrorKind::Usage, origin + " is out of range: '" + raw + "'");
  }
  return 0;
}

// --config is applied before CLI11 parses, so config values become flag
// defaults and explicit flags override them.
RunConfig preload_config(int argc, const char* const* argv) {
  std::string path;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) {
      path = argv[i + 1];
    } else if (a.rfind("--config=", 0) == 0) {
      path = a.substr(9);
    }
  }
  if (path.empty()) return {};
  try {
    return RunConfig::load(path);
  } catch (const Error& e) {
    raise(ErrorKind::Usage, std::string("config file: ") + e.what());
  }
  return {};
}

// Seed precedence: --seed flag > SE_SEED environment > config key > 42.
std::uint64_t default_seed(const RunConfig& cfg) {
  if (const char* env = std::getenv("SE_SEED")) return parse_seed_text(env, "SE_SEED");
  if (cfg.has("seed")) return parse_seed_text(cfg.get("seed"), "config key 'seed'");
  return 42;
}

long long cfg_int(const RunConfig& c, const std::string& key, long long fallback) {
  return c.has(key) ? c.get_int(key) : fallback;
}
double cfg_num(const RunConfig& c, const std::string& key, double fallback) {
  return c.has(key) ? c.get_double(key) : fallback;
}
std::string cfg_str(const RunConfig& c, const std::string& key, const std::string& fallback) {
  return c.get_or(key, fallback);
}

// ---------------------------------------------------------------------------
// Shared option bundles
// ---------------------------------------------------------------------------

struct DataOpts {
  long long synthetic = 0;
  double dup_rate = 0.01;
  double off_rate = 0.33;
  std::string olid_train, olid_test, solid_text, solid_labels, task_test, generic;
  int vocab_cap = 2000;
  int min_freq = 1;
  int max_length = 128;
};

void add_data_opts(CLI::App* cmd, DataOpts& d, const RunConfig& cfg) {
  d.synthetic = cfg_int(cfg, "data.synthetic", d.synthetic);
  d.dup_rate = cfg_num(cfg, "data.dup_rate", d.dup_rate);
  d.off_rate = cfg_num(cfg, "data.off_rate", d.off_rate);
  d.olid_train = cfg_str(cfg, "paths.olid_train", d.olid_train);
  d.olid_test = cfg_str(cfg, "paths.olid_test", d.olid_test);
  d.solid_text = cfg_str(cfg, "paths.solid_text", d.solid_text);
  d.solid_labels = cfg_str(cfg, "paths.solid_labels", d.solid_labels);
  d.task_test = cfg_str(cfg, "paths.task_test", d.task_test);
  d.generic = cfg_str(cfg, "paths.generic", d.generic);
  d.vocab_cap = static_cast<int>(cfg_int(cfg, "data.vocab_cap", d.vocab_cap));
  d.min_freq = static_cast<int>(cfg_int(cfg, "data.min_freq", d.min_freq));
  d.max_length = static_cast<int>(cfg_int(cfg, "data.max_length", d.max_length));

  cmd->add_option("--synthetic", d.synthetic,
                  "generate a synthetic corpus with N confidence-labeled rows");
  cmd->add_option("--dup-rate", d.dup_rate, "synthetic duplicate fraction");
  cmd->add_option("--off-rate", d.off_rate, "synthetic offensive fraction");
  cmd->add_option("--olid-train", d.olid_train, "gold-labeled training TSV (id, tweet, subtask_a)");
  cmd->add_option("--olid-test", d.olid_test, "gold-labeled dev-extension TSV");
  cmd->add_option("--solid-text", d.solid_text, "confidence-corpus text TSV (id, text)");
  cmd->add_option("--solid-labels", d.solid_labels,
                  "confidence-corpus label TSV (id, average, std)");
  cmd->add_option("--task-test", d.task_test, "held-out labeled test TSV");
  cmd->add_option("--generic", d.generic,
                  "plain-text corpus (one sentence per line) for the generic baseline");
  cmd->add_option("--vocab-cap", d.vocab_cap, "maximum vocabulary size");
  cmd->add_option("--min-freq", d.min_freq, "minimum token frequency kept in the vocabulary");
  cmd->add_option("--max-length", d.max_length, "encoded sequence length");
}

struct HyperOpts {
  int epochs = 10;
  double lr = 2e-5;
  double lr_scale = 1.0;
  double dropout = 0.1;
  int batch = 16;
  double mask_rate = 0.15;
  double stage2_fraction = 1.0;
  double olid_dev_fraction = 0.1;
  double solid_dev_fraction = 0.005;
};

struct HyperOptPtrs {
  CLI::Option* lr = nullptr;
  CLI::Option* dropout = nullptr;
};

HyperOptPtrs add_hyper_opts(CLI::App* cmd, HyperOpts& h, const RunConfig& cfg,
                            const std::string& prefix, bool mlm_flags) {
  h.epochs = static_cast<int>(cfg_int(cfg, prefix + ".epochs", h.epochs));
  h.lr = cfg_num(cfg, prefix + ".lr", h.lr);
  h.lr_scale = cfg_num(cfg, prefix + ".lr_scale", h.lr_scale);
  h.dropout = cfg_num(cfg, prefix + ".dropout", h.dropout);
  h.batch = static_cast<int>(cfg_int(cfg, prefix + ".batch", h.batch));
  h.mask_rate = cfg_num(cfg, prefix + ".mask_rate", h.mask_rate);
  h.stage2_fraction = cfg_num(cfg, prefix + ".stage2_fraction", h.stage2_fraction);
  h.olid_dev_fraction = cfg_num(cfg, prefix + ".olid_dev_fraction", h.olid_dev_fraction);
  h.solid_dev_fraction = cfg_num(cfg, prefix + ".solid_dev_fraction", h.solid_dev_fraction);

  HyperOptPtrs ptrs;
  cmd->add_option("--epochs", h.epochs, "training epochs");
  ptrs.lr = cmd->add_option("--lr", h.lr, "learning rate");
  cmd->add_option("--lr-scale", h.lr_scale, "learning-rate multiplier for desk-scale runs");
  ptrs.dropout = cmd->add_option("--dropout", h.dropout, "dropout probability");
  cmd->add_option("--batch", h.batch, "mini-batch size");
  cmd->add_option("--olid-dev-fraction", h.olid_dev_fraction,
                  "dev fraction carved from the gold training corpus");
  if (mlm_flags) {
    cmd->add_option("--mask-rate", h.mask_rate, "token masking probability");
    cmd->add_option("--stage2-fraction", h.stage2_fraction,
                    "fraction of the confidence corpus used by PT-R / PT-C");
    cmd->add_option("--solid-dev-fraction", h.solid_dev_fraction,
                    "dev fraction carved from the confidence corpus");
  }
  return ptrs;
}

struct ShapeOpts {
  int hidden = -1;
  int layers = -1;
  int heads = -1;
  int ffn = -1;
};

void add_shape_opts(CLI::App* cmd, ShapeOpts& s) {
  cmd->add_option("--hidden", s.hidden, "encoder hidden size (default 64)");
  cmd->add_option("--layers", s.layers, "encoder layer count (default 2)");
  cmd->add_option("--heads", s.heads, "attention head count (default 4)");
  cmd->add_option("--ffn", s.ffn, "feed-forward inner size (default 128)");
}

// Flag value if set, else the per-variant config key, else the built-in.
EncoderConfig shape_config(const ShapeOpts& s, Variant v, const RunConfig& cfg, int max_positions,
                           double dropout) {
  auto pick = [&](int flag, const char* key, int builtin) {
    if (flag > 0) return flag;
    const std::string full = std::string("encoder.") + to_string(v) + "." + key;
    return static_cast<int>(cfg_int(cfg, full, builtin));
  };
  EncoderConfig c = EncoderConfig::for_variant(v, pick(s.hidden, "hidden", 64),
                                               pick(s.layers, "layers", 2), pick(s.heads, "heads", 4),
                                               pick(s.ffn, "ffn", 128), /*vocab=*/2000, dropout);
  c.max_positions = max_positions;
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

Corpora resolve_corpora(const DataOpts& d, std::uint64_t seed) {
  const bool any_file = !d.olid_train.empty() || !d.olid_test.empty() || !d.solid_text.empty() ||
                        !d.solid_labels.empty() || !d.task_test.empty();
  if (d.synthetic > 0 && any_file)
    raise(ErrorKind::Usage, "choose either --synthetic or data files, not both");
  if (d.synthetic > 0) {
    SyntheticSpec spec;
    spec.n = d.synthetic;
    spec.dup_rate = d.dup_rate;
    spec.off_rate = d.off_rate;
    spec.seed = seed;
    return prepare_corpora(spec, d.vocab_cap, d.min_freq, d.max_length);
  }
  if (!any_file)
    raise(ErrorKind::Usage, "no data source: pass --synthetic N or the data file flags");
  if (!d.solid_text.empty() && d.solid_labels.empty())
    raise(ErrorKind::Usage, "--solid-text requires --solid-labels to join confidence scores");
  if (d.olid_train.empty() || d.olid_test.empty() || d.solid_text.empty() ||
      d.solid_labels.empty() || d.task_test.empty())
    raise(ErrorKind::Usage,
          "file-based runs need --olid-train, --olid-test, --solid-text, --solid-labels "
          "and --task-test");
  return load_corpora(d.olid_train, d.olid_test, d.solid_text, d.solid_labels, d.task_test,
                      d.generic, d.vocab_cap, d.min_freq, d.max_length);
}

// --parent accepts a checkpoint directory or a content hash (unique prefix
// allowed) resolved against the immediate subdirectories of --checkpoints.
std::string resolve_parent(const std::string& parent, const std::string& checkpoints_root) {
  if (parent.empty()) return parent;
  if (fs::exists(fs::path(parent) / "config.tsv")) return parent;
  if (checkpoints_root.empty())
    raise(ErrorKind::Usage, "parent checkpoint '" + parent +
                                "' not found (pass a directory, or --checkpoints to resolve a hash)");
  if (!fs::is_directory(checkpoints_root))
    raise(ErrorKind::Usage, "--checkpoints '" + checkpoints_root + "' is not a directory");
  std::vector<std::string> dirs;
  for (const auto& entry : fs::directory_iterator(checkpoints_root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "config.tsv"))
      dirs.push_back(entry.path().string());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<std::string> hits;
  for (const auto& dir : dirs) {
    try {
      const std::string h = checkpoint_hash(dir);
      if (h.rfind(parent, 0) == 0) hits.push_back(dir);
    } catch (const Error&) {
      // Not a complete checkpoint; skip it.
    }
  }
  if (hits.size() == 1) return hits.front();
  if (hits.empty())
    raise(ErrorKind::Usage,
          "no checkpoint under '" + checkpoints_root + "' matches hash '" + parent + "'");
  raise(ErrorKind::Usage, "hash prefix '" + parent + "' is ambiguous (" +
                              std::to_string(hits.size()) + " matches under '" + checkpoints_root +
                              "')");
  return {};
}

std::string default_manifest(const std::string& out_dir) {
  fs::path p = fs::path(out_dir).lexically_normal();
  if (p.filename().empty()) p = p.parent_path();
  const fs::path parent = p.parent_path();
  return ((parent.empty() ? fs::path(".") : parent) / "manifest.tsv").string();
}

StageResult as_stage_result(const EnsembleResult& r) {
  StageResult s;
  s.name = r.name;
  s.checkpoint_dir = r.checkpoint_dir;
  s.checkpoint_hash = r.checkpoint_hash;
  s.dev_metric_trace = r.dev_metric_trace;
  s.train_loss_trace = r.train_loss_trace;
  s.best_epoch = r.best_epoch;
  s.best_metric = r.best_metric;
  return s;
}

void print_stage_summary(const std::string& name, int best_epoch, int epochs, double metric,
                         bool is_perplexity, const std::string& hash) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s: best epoch %d/%d, dev %s %.6f, checkpoint %s\n",
                name.c_str(), best_epoch, epochs, is_perplexity ? "perplexity" : "accuracy",
                metric, hash.c_str());
  std::cout << buf;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorKind::Io, "cannot write " + path);
  out << text;
  if (!out) raise(ErrorKind::Io, "failed writing " + path);
}

std::vector<EncodedExample> encode_labeled_tweets(const std::vector<RawTweet>& tweets,
                                                  const Vocabulary& vocab, int max_length,
                                                  const char* what) {
  std::vector<LabeledExample> rows;
  rows.reserve(tweets.size());
  for (const auto& t : tweets) {
    if (!t.gold_label.has_value())
      raise(ErrorKind::Value, std::string(what) + ": row '" + t.id + "' has no gold label");
    LabeledExample e;
    e.id = t.id;
    e.text = t.text;
    e.kind = TargetKind::Class;
    e.target = *t.gold_label;
    rows.push_back(std::move(e));
  }
  return encode_examples(rows, vocab, max_length);
}

std::string predictions_csv(const std::vector<RawTweet>& tweets, const std::vector<int>& preds) {
  std::string out = "id,label\n";
  for (std::size_t i = 0; i < tweets.size(); ++i) {
    out += tweets[i].id;
    out += ',';
    out += label_name(preds[i]);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// prepare-data
// ---------------------------------------------------------------------------

struct PrepareArgs {
  DataOpts data;
  std::uint64_t seed = 42;
  double olid_dev_fraction = 0.1;
  double solid_dev_fraction = 0.005;
  std::string out;
};

void write_labeled_tsv(const std::string& path, const std::vector<RawTweet>& rows) {
  std::string text = "id\ttweet\tsubtask_a\n";
  for (const auto& t : rows) {
    if (!t.gold_label.has_value())
      raise(ErrorKind::Value, "row '" + t.id + "' has no gold label to export");
    text += t.id + "\t" + t.text + "\t" + label_name(*t.gold_label) + "\n";
  }
  write_text_file(path, text);
}

void write_confidence_tsvs(const std::string& text_path, const std::string& labels_path,
                           const std::vector<RawTweet>& rows) {
  std::string texts = "id\ttext\n";
  std::string labels = "id\taverage\tstd\n";
  for (const auto& t : rows) {
    if (!t.avg_conf.has_value() || !t.conf_std.has_value())
      raise(ErrorKind::Value, "row '" + t.id + "' has no confidence scores to export");
    texts += t.id + "\t" + t.text + "\n";
    labels += t.id + "\t" + format_double_roundtrip(*t.avg_conf) + "\t" +
              format_double_roundtrip(*t.conf_std) + "\n";
  }
  write_text_file(text_path, texts);
  write_text_file(labels_path, labels);
}

int cmd_prepare(const PrepareArgs& a) {
  Corpora corp = resolve_corpora(a.data, a.seed);
  fs::create_directories(a.out);
  save_vocab(a.out + "/vocab.tsv", corp.vocab);
  if (a.data.synthetic > 0) {
    // Materialize the generated corpora so the file-based flags (and predict /
    // evaluate) can consume them.
    write_labeled_tsv(a.out + "/olid_train.tsv", corp.olid_train);
    write_labeled_tsv(a.out + "/olid_test.tsv", corp.olid_test);
    write_labeled_tsv(a.out + "/task_test.tsv", corp.task_test);
    write_confidence_tsvs(a.out + "/solid_text.tsv", a.out + "/solid_labels.tsv",
                          corp.solid_raw);
    std::string generic;
    for (const auto& line : corp.generic) generic += line + "\n";
    write_text_file(a.out + "/generic.txt", generic);
  }
  {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "rows\t%lld\nkept\t%lld\nremoved\t%lld\n",
                  static_cast<long long>(corp.solid_raw.size()),
                  static_cast<long long>(corp.solid_dedup.size()), corp.dedup_removed);
    write_text_file(a.out + "/dedup.tsv", buf);
  }
  const Stage all_stages[] = {Stage::FT,     Stage::PT,     Stage::PT_R, Stage::PT_C,
                              Stage::PT_R_C, Stage::PT_C_C, Stage::E};
  for (Stage st : all_stages) {
    SplitPlan plan;
    plan.stage = st;
    plan.olid_dev_fraction = a.olid_dev_fraction;
    plan.solid_dev_fraction = a.solid_dev_fraction;
    plan.seed = a.seed;
    const auto& solid = st == Stage::PT ? corp.solid_raw : corp.solid_dedup;
    SplitResult split = make_split(plan, corp.olid_train, corp.olid_test, solid, corp.task_test);
    write_split_manifest(a.out + "/split_" + to_string(st) + ".tsv", split);
    std::cout << to_string(st) << ": train " << split.train.size() << ", dev "
              << split.dev.size() << "\n";
  }
  std::cout << "vocabulary " << corp.vocab.size() << " tokens, dedup removed "
            << corp.dedup_removed << " of " << corp.solid_raw.size() << " rows\n";
  return 0;
}

// ---------------------------------------------------------------------------
// pretrain / finetune
// ---------------------------------------------------------------------------

struct StageArgs {
  std::string stage;
  std::string variant = "A";
  std::string name;
  std::string parent;
  std::string checkpoints;
  std::string out;
  std::string manifest;
  std::string vocab_out;
  std::uint64_t seed = 42;
  DataOpts data;
  HyperOpts hyper;
  ShapeOpts shape;
};

int cmd_stage(const StageArgs& a, const RunConfig& cfg, bool pretrain_cmd) {
  Corpora corp = resolve_corpora(a.data, a.seed);
  const Variant v = variant_from_string(a.variant);
  const bool generic_stage = pretrain_cmd && a.stage == "GEN";

  StageSpec s;
  s.name = a.name.empty() ? std::string(to_string(v)) + "-" + a.stage : a.name;
  s.generic_stage = generic_stage;
  s.stage = generic_stage ? Stage::PT : stage_from_string(a.stage);
  s.variant = v;
  s.parent_dir = resolve_parent(a.parent, a.checkpoints);
  s.config = shape_config(a.shape, v, cfg, corp.max_length, a.hyper.dropout);
  s.epochs = a.hyper.epochs;
  s.lr = a.hyper.lr;
  s.lr_scale = a.hyper.lr_scale;
  s.dropout = a.hyper.dropout;
  s.batch = a.hyper.batch;
  s.seed = a.seed;
  s.mask_rate = a.hyper.mask_rate;
  s.stage2_fraction = a.hyper.stage2_fraction;
  s.olid_dev_fraction = a.hyper.olid_dev_fraction;
  s.solid_dev_fraction = a.hyper.solid_dev_fraction;
  s.out_dir = a.out;
  if (generic_stage && corp.generic.empty())
    raise(ErrorKind::Usage,
          "the GEN baseline needs a generic corpus (--synthetic provides one; file runs pass "
          "--generic)");

  StageResult r = run_stage(s, corp);
  const std::string manifest = a.manifest.empty() ? default_manifest(a.out) : a.manifest;
  append_run_manifest(manifest, generic_stage ? kGenStageName : to_string(s.stage), to_string(v),
                      r);
  if (!a.vocab_out.empty()) save_vocab(a.vocab_out, corp.vocab);
  print_stage_summary(r.name, r.best_epoch, s.epochs, r.best_metric, r.metric_is_perplexity,
                      r.checkpoint_hash);
  return 0;
}

// ---------------------------------------------------------------------------
// ensemble-train
// ---------------------------------------------------------------------------

struct EnsembleArgs {
  std::vector<std::string> members;  // name=dir overrides
  std::string checkpoints;
  std::string name = "E";
  bool freeze_members = false;
  std::string out;
  std::string manifest;
  std::uint64_t seed = 42;
  DataOpts data;
  HyperOpts hyper;
};

std::vector<std::pair<std::string, std::string>> member_pairs(
    const std::vector<std::string>& overrides, const std::string& checkpoints_root) {
  std::vector<std::pair<std::string, std::string>> pairs;
  if (!overrides.empty()) {
    for (const auto& spec : overrides) {
      const std::size_t eq = spec.find('=');
      if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
        raise(ErrorKind::Usage, "--member expects name=dir, got '" + spec + "'");
      pairs.emplace_back(spec.substr(0, eq), spec.substr(eq + 1));
    }
    return pairs;
  }
  if (checkpoints_root.empty())
    raise(ErrorKind::Usage,
          "pass --checkpoints DIR holding the six member checkpoints, or explicit --member "
          "name=dir pairs");
  for (const auto& n : individual_model_names())
    pairs.emplace_back(n, checkpoints_root + "/" + n);
  return pairs;
}

int cmd_ensemble(const EnsembleArgs& a) {
  Corpora corp = resolve_corpora(a.data, a.seed);
  const auto pairs = member_pairs(a.members, a.checkpoints);
  const bool allow_any = !a.members.empty();
  EnsembleModel ens = build_ensemble(pairs, a.hyper.dropout, a.freeze_members,
                                     RngStream(a.seed).fork("ensemble:" + a.name), allow_any);
  EnsembleSpec es;
  es.name = a.name;
  es.epochs = a.hyper.epochs;
  es.lr = a.hyper.lr;
  es.lr_scale = a.hyper.lr_scale;
  es.dropout = a.hyper.dropout;
  es.freeze_members = a.freeze_members;
  es.batch = a.hyper.batch;
  es.seed = a.seed;
  es.olid_dev_fraction = a.hyper.olid_dev_fraction;
  es.out_dir = a.out;
  EnsembleResult r = train_ensemble(es, ens, corp);
  const std::string manifest = a.manifest.empty() ? default_manifest(a.out) : a.manifest;
  append_run_manifest(manifest, a.name, "-", as_stage_result(r));
  print_stage_summary(r.name, r.best_epoch, es.epochs, r.best_metric, false, r.checkpoint_hash);
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string pred;
  std::string gold;
  std::string name = "model";
  std::string out;
};

std::unordered_map<std::string, int> load_predictions_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::Io, "cannot open predictions file " + path);
  std::string line;
  if (!std::getline(in, line)) raise(ErrorKind::Parse, path + ": empty predictions file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "id,label")
    raise(ErrorKind::Parse, path + " line 1: expected header 'id,label', got '" + line + "'");
  std::unordered_map<std::string, int> preds;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t comma = line.rfind(',');
    if (comma == std::string::npos || comma == 0)
      raise(ErrorKind::Parse,
            path + " line " + std::to_string(line_no) + ": expected 'id,label'");
    const std::string id = line.substr(0, comma);
    const std::string label = line.substr(comma + 1);
    int value = 0;
    if (label == "OFF") {
      value = kOff;
    } else if (label == "NOT") {
      value = kNot;
    } else {
      raise(ErrorKind::Parse, path + " line " + std::to_string(line_no) + ": unknown label '" +
                                  label + "' (expected NOT or OFF)");
    }
    if (!preds.emplace(id, value).second)
      raise(ErrorKind::Parse,
            path + " line " + std::to_string(line_no) + ": duplicate id '" + id + "'");
  }
  return preds;
}

int cmd_evaluate(const EvaluateArgs& a) {
  const auto preds = load_predictions_csv(a.pred);
  const auto gold_rows = load_olid(a.gold);
  std::vector<int> gold, pred;
  std::vector<Misclassified> errors;
  for (const auto& row : gold_rows) {
    if (!row.gold_label.has_value())
      raise(ErrorKind::Value, "gold file row '" + row.id + "' has no label");
    auto it = preds.find(row.id);
    if (it == preds.end())
      raise(ErrorKind::Value, "no prediction for gold id '" + row.id + "'");
    gold.push_back(*row.gold_label);
    pred.push_back(it->second);
    if (it->second != *row.gold_label)
      errors.push_back({row.id, row.text, *row.gold_label, it->second});
  }
  if (preds.size() != gold_rows.size())
    raise(ErrorKind::Value, std::to_string(preds.size() - gold_rows.size()) +
                                " predictions have no matching gold row");
  const ConfusionMatrix cm = confusion(gold, pred);
  const Metrics m = compute_metrics(cm);
  ReportRow row;
  row.name = a.name;
  row.test = m;  // dev accuracy and epochs are unknown here and print as 0
  const std::string text =
      render_report({row}) + "\n" + render_confusion(cm) + "\n" + render_misclassified(errors);
  std::cout << text;
  if (!a.out.empty()) write_text_file(a.out, text);
  return 0;
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

struct PredictArgs {
  std::string ensemble_dir;
  std::string members_root;
  std::string model_dir;
  std::string vocab_path;
  std::string input;
  std::string out;
};

// Accepts the labeled-tweet TSV or a bare two-column `id<TAB>tweet` file.
std::vector<RawTweet> load_predict_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::Io, "cannot open input file " + path);
  std::string header;
  if (!std::getline(in, header)) raise(ErrorKind::Parse, path + ": empty input file");
  if (!header.empty() && header.back() == '\r') header.pop_back();
  if (header != "id\ttweet") return load_olid(path);
  std::vector<RawTweet> rows;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
      raise(ErrorKind::Parse,
            path + " line " + std::to_string(line_no) + ": expected 'id<TAB>tweet'");
    RawTweet t;
    t.id = line.substr(0, tab);
    t.text = line.substr(tab + 1);
    rows.push_back(std::move(t));
  }
  return rows;
}

int cmd_predict(const PredictArgs& a) {
  if (a.ensemble_dir.empty() == a.model_dir.empty())
    raise(ErrorKind::Usage, "pass exactly one of --ensemble or --model");
  const Vocabulary vocab = load_vocab(a.vocab_path);
  const auto rows = load_predict_input(a.input);

  std::vector<LabeledExample> unlabeled;
  unlabeled.reserve(rows.size());
  for (const auto& t : rows) unlabeled.push_back({t.id, t.text, TargetKind::None, 0.0});

  std::vector<int> preds;
  if (!a.model_dir.empty()) {
    const Model<float> model = load_checkpoint(a.model_dir);
    if (model.head != HeadKind::Classification)
      raise(ErrorKind::Usage, "checkpoint '" + a.model_dir + "' has a " +
                                  to_string(model.head) +
                                  " head; predict needs a classification head");
    if (model.config.vocab != vocab.size())
      raise(ErrorKind::Config, "vocabulary has " + std::to_string(vocab.size()) +
                                   " tokens but the model expects " +
                                   std::to_string(model.config.vocab));
    preds = predict_labels(model,
                           encode_examples(unlabeled, vocab, model.config.max_positions));
  } else {
    const EnsembleModel ens = load_ensemble(a.ensemble_dir, a.members_root);
    if (ens.members.empty())
      raise(ErrorKind::Config, "ensemble '" + a.ensemble_dir + "' has no members");
    const auto& cfg = ens.members.front().model.config;
    if (cfg.vocab != vocab.size())
      raise(ErrorKind::Config, "vocabulary has " + std::to_string(vocab.size()) +
                                   " tokens but the ensemble expects " +
                                   std::to_string(cfg.vocab));
    preds = ensemble_predict(ens, encode_examples(unlabeled, vocab, cfg.max_positions));
  }

  const std::string csv = predictions_csv(rows, preds);
  if (a.out.empty()) {
    std::cout << csv;
  } else {
    write_text_file(a.out, csv);
    long long off = 0;
    for (int p : preds) off += p == kOff ? 1 : 0;
    std::cout << "predicted " << rows.size() << " rows (OFF " << off << ", NOT "
              << (static_cast<long long>(rows.size()) - off) << ") -> " << a.out << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// reproduce
// ---------------------------------------------------------------------------

struct EnsemblePreset {
  const char* name;
  double lr;
  double dropout;
};

// The three ensemble configurations compared by the study.
constexpr EnsemblePreset kEnsemblePresets[] = {
    {"E", 2e-5, 0.1}, {"E_1", 1e-5, 0.1}, {"E_2", 1e-5, 0.5}};

struct ReproduceArgs {
  std::string scale = "desk";
  std::string out;
  std::uint64_t seed = 42;
  long long n = 400;
  double dup_rate = 0.01;
  double off_rate = 0.33;
  int vocab_cap = 2000;
  int min_freq = 1;
  int max_length = 32;
  int epochs = 3;
  double lr = 2e-5;
  double lr_scale = 50.0;
  double dropout = 0.1;
  int batch = 16;
  double stage2_fraction = 1.0;
  double olid_dev_fraction = 0.1;
  double solid_dev_fraction = 0.1;
  ShapeOpts shape;
};

int cmd_reproduce(const ReproduceArgs& a, const RunConfig& cfg) {
  fs::create_directories(a.out);
  SyntheticSpec ss;
  ss.n = a.n;
  ss.dup_rate = a.dup_rate;
  ss.off_rate = a.off_rate;
  ss.seed = a.seed;
  Corpora corp = prepare_corpora(ss, a.vocab_cap, a.min_freq, a.max_length);
  save_vocab(a.out + "/vocab.tsv", corp.vocab);

  PipelineConfig pc;
  pc.encoder_a = shape_config(a.shape, Variant::A, cfg, a.max_length, a.dropout);
  pc.encoder_b = shape_config(a.shape, Variant::B, cfg, a.max_length, a.dropout);
  pc.epochs = a.epochs;
  pc.lr = a.lr;
  pc.lr_scale = a.lr_scale;
  pc.dropout = a.dropout;
  pc.batch = a.batch;
  pc.seed = a.seed;
  pc.stage2_fraction = a.stage2_fraction;
  pc.olid_dev_fraction = a.olid_dev_fraction;
  pc.solid_dev_fraction = a.solid_dev_fraction;
  pc.out_dir = a.out;
  PipelineResult pipe = run_pipeline(pc, corp);

  const std::string manifest = a.out + "/manifest.tsv";
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& n : individual_model_names()) pairs.emplace_back(n, a.out + "/" + n);

  std::vector<EnsembleModel> ens_models;
  std::vector<EnsembleResult> ens_results;
  for (const auto& preset : kEnsemblePresets) {
    EnsembleModel ens =
        build_ensemble(pairs, preset.dropout, false,
                       RngStream(a.seed).fork(std::string("ensemble:") + preset.name));
    EnsembleSpec es;
    es.name = preset.name;
    es.epochs = a.epochs;
    es.lr = preset.lr;
    es.lr_scale = a.lr_scale;
    es.dropout = preset.dropout;
    es.freeze_members = false;
    es.batch = a.batch;
    es.seed = a.seed;
    es.olid_dev_fraction = a.olid_dev_fraction;
    es.out_dir = a.out + "/" + preset.name;
    EnsembleResult r = train_ensemble(es, ens, corp);
    append_run_manifest(manifest, preset.name, "-", as_stage_result(r));
    ens_models.push_back(std::move(ens));
    ens_results.push_back(std::move(r));
  }

  // Report over the held-out task test set: six individuals, then the three
  // ensemble configurations.
  const auto test_examples =
      encode_labeled_tweets(corp.task_test, corp.vocab, corp.max_length, "task test");
  std::vector<int> gold;
  for (const auto& t : corp.task_test) gold.push_back(*t.gold_label);

  std::vector<ReportRow> rows;
  for (const auto& name : individual_model_names()) {
    const Model<float> model = load_checkpoint(a.out + "/" + name);
    const auto preds = predict_labels(model, test_examples);
    const StageResult& sr = pipe.stages.at(name);
    rows.push_back({name, sr.best_metric, compute_metrics(confusion(gold, preds)),
                    sr.best_epoch});
  }
  std::vector<std::vector<int>> ens_preds;
  for (std::size_t i = 0; i < ens_models.size(); ++i) {
    ens_preds.push_back(ensemble_predict(ens_models[i], test_examples));
    rows.push_back({ens_results[i].name, ens_results[i].best_metric,
                    compute_metrics(confusion(gold, ens_preds[i])), ens_results[i].best_epoch});
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < ens_results.size(); ++i)
    if (ens_results[i].best_metric > ens_results[best].best_metric) best = i;

  std::string report = render_report(rows);
  for (std::size_t i = 0; i < ens_results.size(); ++i) {
    report += "\nconfusion " + ens_results[i].name + " (task test)\n";
    report += render_confusion(confusion(gold, ens_preds[i]));
  }
  std::vector<Misclassified> errors;
  for (std::size_t i = 0; i < corp.task_test.size(); ++i) {
    if (ens_preds[best][i] != gold[i])
      errors.push_back(
          {corp.task_test[i].id, corp.task_test[i].text, gold[i], ens_preds[best][i]});
  }
  report += "\nerrors " + ens_results[best].name + " (task test)\n";
  report += render_misclassified(errors);

  write_text_file(a.out + "/report.txt", report);
  write_text_file(a.out + "/metrics.tsv", metrics_tsv(rows));
  write_text_file(a.out + "/predictions.csv", predictions_csv(corp.task_test, ens_preds[best]));

  std::cout << report;
  std::cout << "\nwrote " << a.out << "/report.txt, metrics.tsv, predictions.csv, manifest.tsv\n";
  return 0;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepArgs {
  std::string checkpoints;
  std::vector<std::string> members;
  std::string out;
  std::uint64_t seed = 42;
  bool freeze_members = false;
  DataOpts data;
  int epochs = 3;
  double lr_scale = 1.0;
  int batch = 16;
  double olid_dev_fraction = 0.1;
};

int cmd_sweep(const SweepArgs& a) {
  Corpora corp = resolve_corpora(a.data, a.seed);
  const auto pairs = member_pairs(a.members, a.checkpoints);
  const bool allow_any = !a.members.empty();
  fs::create_directories(a.out);

  const double lrs[] = {2e-5, 1e-5};
  const double dropouts[] = {0.1, 0.5};
  struct SweepRow {
    std::string name;
    double lr, dropout, dev_acc;
    int best_epoch;
  };
  std::vector<SweepRow> table;
  for (double lr : lrs) {
    for (double p : dropouts) {
      const std::string name = "lr" + format_double_roundtrip(lr) + "-p" +
                               format_double_roundtrip(p);
      EnsembleModel ens = build_ensemble(pairs, p, a.freeze_members,
                                         RngStream(a.seed).fork("ensemble:" + name), allow_any);
      EnsembleSpec es;
      es.name = name;
      es.epochs = a.epochs;
      es.lr = lr;
      es.lr_scale = a.lr_scale;
      es.dropout = p;
      es.freeze_members = a.freeze_members;
      es.batch = a.batch;
      es.seed = a.seed;
      es.olid_dev_fraction = a.olid_dev_fraction;
      es.out_dir = a.out + "/" + name;
      EnsembleResult r = train_ensemble(es, ens, corp);
      table.push_back({name, lr, p, r.best_metric, r.best_epoch});
    }
  }
  std::stable_sort(table.begin(), table.end(),
                   [](const SweepRow& x, const SweepRow& y) { return x.dev_acc > y.dev_acc; });
  std::string text = "config\tlr\tdropout\tdev_acc\tbest_epoch\n";
  for (const auto& row : table) {
    char buf[192];
    std::snprintf(buf, sizeof(buf), "%s\t%s\t%s\t%.3f\t%d\n", row.name.c_str(),
                  format_double_roundtrip(row.lr).c_str(),
                  format_double_roundtrip(row.dropout).c_str(), row.dev_acc, row.best_epoch);
    text += buf;
  }
  write_text_file(a.out + "/sweep.tsv", text);
  std::cout << text;
  return 0;
}

// ---------------------------------------------------------------------------
// Wiring
// ---------------------------------------------------------------------------

int run_cli_impl(int argc, const char* const* argv) {
  const RunConfig cfg = preload_config(argc, argv);
  const std::uint64_t seed0 = default_seed(cfg);

  CLI::App app{"staged encoder training and ensembling for offensive-language identification"};
  app.require_subcommand(1);
  std::string config_path;  // consumed by preload_config; registered for parsing/help
  app.add_option("--config", config_path, "flat TSV config file (dotted.key<TAB>value)");

  // preload_config already consumed the value; registration is for parsing/help.
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "flat TSV config file (dotted.key<TAB>value)");
  };

  PrepareArgs prepare;
  prepare.seed = seed0;
  auto* cmd_prep = app.add_subcommand("prepare-data",
                                      "build the vocabulary, dedup report and split manifests");
  add_common(cmd_prep);
  add_data_opts(cmd_prep, prepare.data, cfg);
  cmd_prep->add_option("--seed", prepare.seed, "split/shuffle seed");
  cmd_prep->add_option("--olid-dev-fraction", prepare.olid_dev_fraction,
                       "dev fraction carved from the gold training corpus");
  cmd_prep->add_option("--solid-dev-fraction", prepare.solid_dev_fraction,
                       "dev fraction carved from the confidence corpus");
  cmd_prep->add_option("--out", prepare.out, "output directory")->required();

  StageArgs pre;
  pre.stage = "GEN";
  pre.seed = seed0;
  auto* cmd_pre = app.add_subcommand("pretrain", "masked-LM training (GEN baseline or PT stage)");
  add_common(cmd_pre);
  cmd_pre->add_option("--stage", pre.stage, "GEN or PT")
      ->check(CLI::IsMember({"GEN", "PT"}));
  cmd_pre->add_option("--variant", pre.variant, "encoder variant")
      ->check(CLI::IsMember({"A", "B"}));
  cmd_pre->add_option("--name", pre.name, "stage label (default <variant>-<stage>)");
  cmd_pre->add_option("--parent", pre.parent, "parent checkpoint directory or content hash");
  cmd_pre->add_option("--checkpoints", pre.checkpoints, "directory scanned to resolve a hash parent");
  cmd_pre->add_option("--seed", pre.seed, "training seed");
  add_data_opts(cmd_pre, pre.data, cfg);
  add_hyper_opts(cmd_pre, pre.hyper, cfg, "stage", true);
  add_shape_opts(cmd_pre, pre.shape);
  cmd_pre->add_option("--manifest", pre.manifest, "run manifest path (default <out>/../manifest.tsv)");
  cmd_pre->add_option("--save-vocab", pre.vocab_out, "also write the vocabulary TSV here");
  cmd_pre->add_option("--out", pre.out, "checkpoint output directory")->required();

  StageArgs fine;
  fine.stage = "FT";
  fine.seed = seed0;
  auto* cmd_fine = app.add_subcommand("finetune", "supervised training of one pipeline stage");
  add_common(cmd_fine);
  cmd_fine->add_option("--stage", fine.stage, "FT, PT-R, PT-C, PT-R-C or PT-C-C")
      ->check(CLI::IsMember({"FT", "PT-R", "PT-C", "PT-R-C", "PT-C-C"}));
  cmd_fine->add_option("--variant", fine.variant, "encoder variant")
      ->check(CLI::IsMember({"A", "B"}));
  cmd_fine->add_option("--name", fine.name, "stage label (default <variant>-<stage>)");
  cmd_fine->add_option("--parent", fine.parent, "parent checkpoint directory or content hash");
  cmd_fine->add_option("--checkpoints", fine.checkpoints,
                       "directory scanned to resolve a hash parent");
  cmd_fine->add_option("--seed", fine.seed, "training seed");
  add_data_opts(cmd_fine, fine.data, cfg);
  add_hyper_opts(cmd_fine, fine.hyper, cfg, "stage", true);
  add_shape_opts(cmd_fine, fine.shape);
  cmd_fine->add_option("--manifest", fine.manifest,
                       "run manifest path (default <out>/../manifest.tsv)");
  cmd_fine->add_option("--save-vocab", fine.vocab_out, "also write the vocabulary TSV here");
  cmd_fine->add_option("--out", fine.out, "checkpoint output directory")->required();

  EnsembleArgs ens;
  ens.seed = seed0;
  ens.hyper.epochs = 10;
  auto* cmd_ens = app.add_subcommand("ensemble-train",
                                     "train the concatenation ensemble over member checkpoints");
  add_common(cmd_ens);
  cmd_ens->add_option("--member", ens.members,
                      "name=dir member override (repeat; any count allowed)");
  cmd_ens->add_option("--checkpoints", ens.checkpoints,
                      "directory holding the six canonical member checkpoints");
  cmd_ens->add_option("--name", ens.name, "ensemble label");
  cmd_ens->add_flag("--freeze-members", ens.freeze_members,
                    "train only the decoder; member weights stay fixed");
  cmd_ens->add_option("--seed", ens.seed, "training seed");
  add_data_opts(cmd_ens, ens.data, cfg);
  add_hyper_opts(cmd_ens, ens.hyper, cfg, "ensemble", false);
  cmd_ens->add_option("--manifest", ens.manifest,
                      "run manifest path (default <out>/../manifest.tsv)");
  cmd_ens->add_option("--out", ens.out, "ensemble output directory")->required();

  EvaluateArgs eval_args;
  auto* cmd_eval = app.add_subcommand("evaluate", "score a predictions CSV against gold labels");
  add_common(cmd_eval);
  cmd_eval->add_option("--pred", eval_args.pred, "predictions CSV (id,label)")->required();
  cmd_eval->add_option("--gold", eval_args.gold, "gold TSV (id, tweet, subtask_a)")->required();
  cmd_eval->add_option("--name", eval_args.name, "row label in the report");
  cmd_eval->add_option("--out", eval_args.out, "also write the report here");

  PredictArgs pred_args;
  auto* cmd_pred = app.add_subcommand("predict", "write label predictions for a tweet file");
  add_common(cmd_pred);
  cmd_pred->add_option("--ensemble", pred_args.ensemble_dir, "ensemble checkpoint directory");
  cmd_pred->add_option("--members-root", pred_args.members_root,
                       "base directory for external member references");
  cmd_pred->add_option("--model", pred_args.model_dir, "single-model checkpoint directory");
  cmd_pred->add_option("--vocab", pred_args.vocab_path, "vocabulary TSV")->required();
  cmd_pred->add_option("--input", pred_args.input, "input TSV (id, tweet[, subtask_a])")
      ->required();
  cmd_pred->add_option("--out", pred_args.out, "predictions CSV path (default: stdout)");

  ReproduceArgs rep;
  rep.seed = seed0;
  auto* cmd_rep = app.add_subcommand(
      "reproduce", "synthetic data -> full stage pipeline -> E/E_1/E_2 ensembles -> report");
  add_common(cmd_rep);
  cmd_rep->add_option("--scale", rep.scale, "run scale preset")
      ->check(CLI::IsMember({"desk"}));
  cmd_rep->add_option("--seed", rep.seed, "run seed");
  cmd_rep->add_option("--n", rep.n, "synthetic confidence-corpus size");
  cmd_rep->add_option("--dup-rate", rep.dup_rate, "synthetic duplicate fraction");
  cmd_rep->add_option("--off-rate", rep.off_rate, "synthetic offensive fraction");
  cmd_rep->add_option("--vocab-cap", rep.vocab_cap, "maximum vocabulary size");
  cmd_rep->add_option("--min-freq", rep.min_freq, "minimum token frequency");
  cmd_rep->add_option("--max-length", rep.max_length, "encoded sequence length");
  cmd_rep->add_option("--epochs", rep.epochs, "epochs per stage and per ensemble");
  cmd_rep->add_option("--lr", rep.lr, "stage learning rate");
  cmd_rep->add_option("--lr-scale", rep.lr_scale, "learning-rate multiplier for desk scale");
  cmd_rep->add_option("--dropout", rep.dropout, "stage dropout");
  cmd_rep->add_option("--batch", rep.batch, "mini-batch size");
  cmd_rep->add_option("--stage2-fraction", rep.stage2_fraction,
                      "fraction of the confidence corpus used by PT-R / PT-C");
  cmd_rep->add_option("--olid-dev-fraction", rep.olid_dev_fraction,
                      "dev fraction carved from the gold training corpus");
  cmd_rep->add_option("--solid-dev-fraction", rep.solid_dev_fraction,
                      "dev fraction carved from the confidence corpus");
  add_shape_opts(cmd_rep, rep.shape);
  cmd_rep->add_option("--out", rep.out, "run output directory")->required();

  SweepArgs sweep;
  sweep.seed = seed0;
  auto* cmd_sw = app.add_subcommand(
      "sweep", "train the ensemble over lr {2e-5,1e-5} x dropout {0.1,0.5} and rank by dev accuracy");
  add_common(cmd_sw);
  cmd_sw->add_option("--member", sweep.members, "name=dir member override (repeat)");
  cmd_sw->add_option("--checkpoints", sweep.checkpoints,
                     "directory holding the six canonical member checkpoints");
  cmd_sw->add_flag("--freeze-members", sweep.freeze_members,
                   "train only the decoder; member weights stay fixed");
  cmd_sw->add_option("--seed", sweep.seed, "training seed");
  add_data_opts(cmd_sw, sweep.data, cfg);
  cmd_sw->add_option("--epochs", sweep.epochs, "epochs per configuration");
  cmd_sw->add_option("--lr-scale", sweep.lr_scale, "learning-rate multiplier");
  cmd_sw->add_option("--batch", sweep.batch, "mini-batch size");
  cmd_sw->add_option("--olid-dev-fraction", sweep.olid_dev_fraction,
                     "dev fraction carved from the gold training corpus");
  cmd_sw->add_option("--out", sweep.out, "sweep output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (cmd_prep->parsed()) return cmd_prepare(prepare);
  if (cmd_pre->parsed()) return cmd_stage(pre, cfg, true);
  if (cmd_fine->parsed()) return cmd_stage(fine, cfg, false);
  if (cmd_ens->parsed()) return cmd_ensemble(ens);
  if (cmd_eval->parsed()) return cmd_evaluate(eval_args);
  if (cmd_pred->parsed()) return cmd_predict(pred_args);
  if (cmd_rep->parsed()) return cmd_reproduce(rep, cfg);
  if (cmd_sw->parsed()) return cmd_sweep(sweep);
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  try {
    return run_cli_impl(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::Usage ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace olens
