#include "olens/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "olens/checkpoint.hpp"
#include "olens/eval.hpp"

namespace olens {

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

void zero_grads(NamedParams& params) {
  for (auto& [name, p] : params) p.zero_grad();
}

void adam_step(NamedParams& params, AdamState& state) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (auto& [name, p] : params) {
    auto& [m, v] = state.moments[name];
    const std::size_t n = p.numel();
    if (m.empty()) {
      m.assign(n, 0.0);
      v.assign(n, 0.0);
    } else if (m.size() != n) {
      raise(ErrorKind::Contract, "adam_step: parameter " + name + " changed size");
    }
    auto vals = p.mutable_values();
    auto g = p.grad();  // empty span when no gradient was ever accumulated
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      vals[i] = static_cast<float>(static_cast<double>(vals[i]) -
                                   state.lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

// ---------------------------------------------------------------------------
// MLM masking
// ---------------------------------------------------------------------------

MaskedExample mask_tokens(const EncodedSequence& seq, double rate, MaskingPolicy policy,
                          const std::string& example_id, int epoch, const RngStream& base,
                          int vocab_size) {
  if (!(rate >= 0.0 && rate < 1.0))
    raise(ErrorKind::Value, "mask_tokens: rate " + std::to_string(rate) + " outside [0, 1)");
  if (vocab_size <= kNumSpecials)
    raise(ErrorKind::Value, "mask_tokens: vocabulary has no maskable tokens");
  const std::string label = policy == MaskingPolicy::Static
                                ? "mask:" + example_id
                                : "mask:" + example_id + ":" + std::to_string(epoch);
  RngStream rng = base.fork(label);
  MaskedExample out;
  out.seq = seq;
  out.targets.assign(seq.ids.size(), -1);
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    if (seq.attention_mask[i] == 0) continue;
    const int id = seq.ids[i];
    if (id < kNumSpecials) continue;  // specials and PAD are never masked
    if (rng.next_double() >= rate) continue;
    out.targets[i] = id;
    out.selected += 1;
    const double action = rng.next_double();
    if (action < 0.8) {
      out.seq.ids[i] = kMask;
    } else if (action < 0.9) {
      out.seq.ids[i] =
          kNumSpecials + static_cast<int>(rng.next_below(
                             static_cast<std::uint64_t>(vocab_size - kNumSpecials)));
    }
    // else: token kept, but still predicted
  }
  return out;
}

// ---------------------------------------------------------------------------
// Epoch loop
// ---------------------------------------------------------------------------

std::vector<EncodedExample> encode_examples(const std::vector<LabeledExample>& rows,
                                            const Vocabulary& vocab, int max_length) {
  std::vector<EncodedExample> out;
  out.reserve(rows.size());
  for (const auto& row : rows)
    out.push_back({row.id, encode(row.text, vocab, max_length), row.kind, row.target});
  return out;
}

namespace {

// Positions (within the live prefix) and original ids selected by the mask.
void masked_positions(const MaskedExample& masked, std::vector<int>& positions,
                      std::vector<int>& targets) {
  positions.clear();
  targets.clear();
  for (int i = 0; i < masked.seq.real_length(); ++i) {
    const int t = masked.targets[static_cast<std::size_t>(i)];
    if (t >= 0) {
      positions.push_back(i);
      targets.push_back(t);
    }
  }
}

Tensor<float> example_loss(Model<float>& model, const EncodedExample& ex,
                           const MaskedExample& masked, HeadKind objective,
                           const RngStream& drop_rng) {
  if (objective == HeadKind::Mlm) {
    Tensor<float> hidden = encode_prefix(model, masked.seq, Mode::Train, drop_rng);
    std::vector<int> positions, targets;
    masked_positions(masked, positions, targets);
    return cross_entropy(mlm_logits_at(model, hidden, positions), targets);
  }
  Tensor<float> hidden = encode_prefix(model, ex.seq, Mode::Train, drop_rng);
  Tensor<float> rep = sentence_representation(hidden);
  if (objective == HeadKind::Classification) {
    if (ex.kind != TargetKind::Class)
      raise(ErrorKind::Contract, "run_epoch: example " + ex.id + " lacks a class target");
    return cross_entropy(reshape(classify(model, rep), {1, 2}),
                         {static_cast<int>(ex.target)});
  }
  if (objective == HeadKind::Regression) {
    if (ex.kind != TargetKind::Confidence)
      raise(ErrorKind::Contract, "run_epoch: example " + ex.id + " lacks a confidence target");
    return mse(regress(model, rep), Tensor<float>::scalar(static_cast<float>(ex.target)));
  }
  raise(ErrorKind::Contract, "run_epoch: objective has no loss");
}

}  // namespace

double run_epoch(Model<float>& model, const std::vector<EncodedExample>& examples,
                 HeadKind objective, AdamState& opt, int epoch, int batch_size,
                 double mask_rate, const RngStream& run_rng, const std::string& run_label) {
  if (examples.empty()) raise(ErrorKind::Value, "run_epoch: no training examples");
  if (batch_size <= 0) raise(ErrorKind::Value, "run_epoch: batch size must be positive");
  require_head(model, objective, "run_epoch");

  auto params = model.params();
  auto order = shuffled_indices(
      examples.size(), run_rng.fork("shuffle:" + run_label + ":" + std::to_string(epoch)));

  double loss_sum = 0.0;
  long long contributing = 0;
  const std::size_t bs = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t end = std::min(start + bs, order.size());
    // Pre-pass: MLM examples that drew no masked position sit this batch out,
    // so the 1/B gradient scale matches the examples actually contributing.
    std::vector<std::pair<const EncodedExample*, MaskedExample>> batch;
    for (std::size_t i = start; i < end; ++i) {
      const EncodedExample& ex = examples[order[i]];
      if (objective == HeadKind::Mlm) {
        MaskedExample masked = mask_tokens(ex.seq, mask_rate, model.config.masking, ex.id,
                                           epoch, run_rng, model.config.vocab);
        if (masked.selected == 0) continue;
        batch.emplace_back(&ex, std::move(masked));
      } else {
        batch.emplace_back(&ex, MaskedExample{});
      }
    }
    if (batch.empty()) continue;

    const float inv = 1.0f / static_cast<float>(batch.size());
    for (auto& [ex, masked] : batch) {
      Tape<float> tape;
      TapeScope<float> scope(tape);
      RngStream drop = run_rng.fork("drop:" + run_label + ":" + std::to_string(epoch) + ":" +
                                    ex->id);
      Tensor<float> loss = example_loss(model, *ex, masked, objective, drop);
      loss_sum += loss.item();
      contributing += 1;
      tape.backward(loss, inv);
    }
    adam_step(params, opt);
    zero_grads(params);
  }
  if (contributing == 0)
    raise(ErrorKind::Contract, "run_epoch: every example was skipped (no masked positions)");
  return loss_sum / static_cast<double>(contributing);
}

std::vector<int> predict_labels(const Model<float>& model,
                                const std::vector<EncodedExample>& examples) {
  if (model.head != HeadKind::Classification && model.head != HeadKind::Regression)
    raise(ErrorKind::Contract, "predict_labels: model head produces no labels");
  std::vector<int> out;
  out.reserve(examples.size());
  RngStream unused(0);
  for (const auto& ex : examples) {
    Tensor<float> hidden = encode_prefix(model, ex.seq, Mode::Eval, unused);
    Tensor<float> rep = sentence_representation(hidden);
    if (model.head == HeadKind::Classification) {
      out.push_back(predicted_label(classify(model, rep)));
    } else {
      out.push_back(regress(model, rep).item() > 0.5f ? 1 : 0);
    }
  }
  return out;
}

double evaluate_accuracy(const Model<float>& model, const std::vector<EncodedExample>& dev) {
  if (dev.empty()) raise(ErrorKind::Value, "evaluate_accuracy: no examples");
  std::vector<int> pred = predict_labels(model, dev);
  long long correct = 0;
  for (std::size_t i = 0; i < dev.size(); ++i) {
    int gold;
    if (dev[i].kind == TargetKind::Class) {
      gold = static_cast<int>(dev[i].target);
    } else if (dev[i].kind == TargetKind::Confidence) {
      gold = dev[i].target > 0.5 ? 1 : 0;
    } else {
      raise(ErrorKind::Contract, "evaluate_accuracy: example " + dev[i].id + " has no target");
    }
    if (pred[i] == gold) correct += 1;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(dev.size());
}

// ---------------------------------------------------------------------------
// Corpora
// ---------------------------------------------------------------------------

namespace {

Vocabulary vocab_over(const std::vector<std::string>& texts, int vocab_cap, int min_freq) {
  return build_vocab(texts, static_cast<std::size_t>(vocab_cap), min_freq);
}

}  // namespace

Corpora prepare_corpora(const SyntheticSpec& spec, int vocab_cap, int min_freq,
                        int max_length) {
  SyntheticData data = generate_synthetic(spec);
  Corpora c;
  c.max_length = max_length;
  c.vocab = vocab_over(all_texts(data), vocab_cap, min_freq);
  auto [kept, removed] = dedup(data.solid);
  c.solid_dedup = std::move(kept);
  c.dedup_removed = removed;
  c.solid_raw = std::move(data.solid);
  c.olid_train = std::move(data.olid_train);
  c.olid_test = std::move(data.olid_test);
  c.task_test = std::move(data.task_test);
  c.generic = std::move(data.generic);
  return c;
}

Corpora load_corpora(const std::string& olid_train_path, const std::string& olid_test_path,
                     const std::string& solid_text_path, const std::string& solid_labels_path,
                     const std::string& task_test_path, const std::string& generic_path,
                     int vocab_cap, int min_freq, int max_length) {
  Corpora c;
  c.max_length = max_length;
  c.olid_train = load_olid(olid_train_path);
  c.olid_test = load_olid(olid_test_path);
  c.solid_raw = load_solid(solid_text_path, solid_labels_path);
  c.task_test = load_olid(task_test_path);
  auto [kept, removed] = dedup(c.solid_raw);
  c.solid_dedup = std::move(kept);
  c.dedup_removed = removed;
  if (!generic_path.empty()) {
    std::ifstream in(generic_path, std::ios::binary);
    if (!in) raise(ErrorKind::Io, "cannot open generic corpus " + generic_path);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) c.generic.push_back(line);
    }
  }
  std::vector<std::string> texts;
  for (const auto& t : c.olid_train) texts.push_back(t.text);
  for (const auto& t : c.olid_test) texts.push_back(t.text);
  for (const auto& t : c.solid_raw) texts.push_back(t.text);
  for (const auto& t : c.task_test) texts.push_back(t.text);
  for (const auto& t : c.generic) texts.push_back(t);
  c.vocab = vocab_over(texts, vocab_cap, min_freq);
  return c;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

HeadKind objective_for(Stage stage) {
  switch (stage) {
    case Stage::FT: return HeadKind::Classification;
    case Stage::PT: return HeadKind::Mlm;
    case Stage::PT_R: return HeadKind::Regression;
    case Stage::PT_C: return HeadKind::Classification;
    case Stage::PT_R_C: return HeadKind::Classification;
    case Stage::PT_C_C: return HeadKind::Classification;
    case Stage::E: break;
  }
  raise(ErrorKind::Value, "objective_for: the ensemble stage is trained by the ensemble module");
}

StageResult run_stage(const StageSpec& spec, const Corpora& corp) {
  if (spec.epochs < 1) raise(ErrorKind::Value, "run_stage: epochs must be at least 1");
  if (spec.out_dir.empty()) raise(ErrorKind::Value, "run_stage: no output directory");
  if (!(spec.stage2_fraction > 0.0 && spec.stage2_fraction <= 1.0))
    raise(ErrorKind::Value, "run_stage: stage2 fraction outside (0, 1]");
  const HeadKind objective = spec.generic_stage ? HeadKind::Mlm : objective_for(spec.stage);

  std::vector<LabeledExample> train, dev;
  if (spec.generic_stage) {
    if (corp.generic.empty())
      raise(ErrorKind::Value, "stage " + spec.name + ": the generic corpus is empty");
    long long i = 0;
    for (const auto& text : corp.generic)
      train.push_back({"generic:" + std::to_string(i++), text, TargetKind::None, 0.0});
  } else {
    SplitPlan plan;
    plan.stage = spec.stage;
    plan.seed = spec.seed;
    plan.olid_dev_fraction = spec.olid_dev_fraction;
    plan.solid_dev_fraction = spec.solid_dev_fraction;
    const auto& solid = spec.stage == Stage::PT ? corp.solid_raw : corp.solid_dedup;
    SplitResult split = make_split(plan, corp.olid_train, corp.olid_test, solid, corp.task_test);
    train = std::move(split.train);
    dev = std::move(split.dev);
  }

  if ((spec.stage == Stage::PT_R || spec.stage == Stage::PT_C) && !spec.generic_stage &&
      spec.stage2_fraction < 1.0) {
    const auto keep = static_cast<long long>(
        std::floor(spec.stage2_fraction * static_cast<double>(train.size())));
    if (keep < 1)
      raise(ErrorKind::Value, "stage " + spec.name + ": stage2 fraction leaves no rows");
    train.resize(static_cast<std::size_t>(keep));
  }

  // MLM stages score epochs on perplexity over a held-out 0.5% slice (at
  // least one row) carved from their own training corpus.
  if (objective == HeadKind::Mlm) {
    auto order = shuffled_indices(train.size(), RngStream(spec.seed).fork("holdout:" + spec.name));
    auto [train_n, dev_n] =
        slice_counts(static_cast<long long>(train.size()), spec.solid_dev_fraction);
    if (dev_n == 0) {
      dev_n = 1;
      train_n = static_cast<long long>(train.size()) - 1;
    }
    if (train_n < 1)
      raise(ErrorKind::Value, "stage " + spec.name + ": corpus too small for a holdout");
    std::vector<LabeledExample> shuffled_train, holdout;
    for (long long i = 0; i < train_n; ++i) shuffled_train.push_back(train[order[i]]);
    for (long long i = train_n; i < train_n + dev_n; ++i) holdout.push_back(train[order[i]]);
    train = std::move(shuffled_train);
    dev = std::move(holdout);
  }
  if (dev.empty()) raise(ErrorKind::Contract, "stage " + spec.name + ": no dev examples");

  Model<float> model;
  if (!spec.parent_dir.empty()) {
    model = load_checkpoint(spec.parent_dir);
    if (model.config.variant != spec.variant)
      raise(ErrorKind::Config, "stage " + spec.name + ": parent checkpoint is variant " +
                                   to_string(model.config.variant) + ", stage wants " +
                                   to_string(spec.variant));
    if (model.config.vocab != static_cast<int>(corp.vocab.size()))
      raise(ErrorKind::Config,
            "stage " + spec.name + ": parent vocabulary size " +
                std::to_string(model.config.vocab) + " != corpus vocabulary " +
                std::to_string(corp.vocab.size()));
    model.config.dropout = spec.dropout;
    // Matching head kinds carry over bit-for-bit (e.g. the classification
    // head crossing into the final stage); otherwise the head is rebuilt.
    if (model.head != objective)
      model = swap_head(model, objective, RngStream(spec.seed).fork("head:" + spec.name));
  } else {
    const bool scratch_ok =
        spec.generic_stage || spec.stage == Stage::FT || spec.stage == Stage::PT;
    if (!scratch_ok)
      raise(ErrorKind::Usage, "stage " + spec.name + ": a parent checkpoint is required");
    EncoderConfig cfg = spec.config;
    if (cfg.variant != spec.variant)
      raise(ErrorKind::Config, "stage " + spec.name + ": config variant mismatch");
    cfg.dropout = spec.dropout;
    cfg.vocab = static_cast<int>(corp.vocab.size());
    model = init_model<float>(cfg, RngStream(spec.seed).fork("model:" + spec.name), objective);
  }

  model.set_requires_grad(true);
  AdamState opt;
  opt.lr = spec.lr * spec.lr_scale;
  RngStream run(spec.seed);
  auto train_encoded = encode_examples(train, corp.vocab, corp.max_length);
  auto dev_encoded = encode_examples(dev, corp.vocab, corp.max_length);

  StageResult res;
  res.name = spec.name;
  res.metric_is_perplexity = objective == HeadKind::Mlm;
  Model<float> best;
  for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
    const double loss = run_epoch(model, train_encoded, objective, opt, epoch, spec.batch,
                                  spec.mask_rate, run, spec.name);
    const double metric =
        objective == HeadKind::Mlm
            ? perplexity(model, dev_encoded, run.fork("evalmask:" + spec.name), spec.mask_rate)
            : evaluate_accuracy(model, dev_encoded);
    res.train_loss_trace.push_back(loss);
    res.dev_metric_trace.push_back(metric);
    const bool better = res.best_epoch == 0 || (objective == HeadKind::Mlm
                                                    ? metric < res.best_metric
                                                    : metric > res.best_metric);
    if (better) {  // strict comparison keeps the earliest epoch on ties
      best = model.clone();
      res.best_metric = metric;
      res.best_epoch = epoch;
    }
  }
  save_checkpoint(spec.out_dir, best);
  res.checkpoint_dir = spec.out_dir;
  res.checkpoint_hash = checkpoint_hash(spec.out_dir);
  return res;
}

void append_run_manifest(const std::string& path, const std::string& stage,
                         const std::string& variant, const StageResult& result) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) raise(ErrorKind::Io, "cannot open run manifest " + path);
  char buf[64];
  for (std::size_t e = 0; e < result.dev_metric_trace.size(); ++e) {
    out << stage << '\t' << variant << '\t' << (e + 1) << '\t';
    std::snprintf(buf, sizeof buf, "%.6f", result.dev_metric_trace[e]);
    out << buf << '\t' << result.checkpoint_hash << '\t';
    std::snprintf(buf, sizeof buf, "%.6f", result.train_loss_trace[e]);
    out << buf << '\n';
  }
  if (!out) raise(ErrorKind::Io, "failed writing run manifest " + path);
}

const std::vector<std::string>& individual_model_names() {
  static const std::vector<std::string> names = {"A-FT",     "B-FT",     "A-PT-C-C",
                                                 "A-PT-R-C", "B-PT-C-C", "B-PT-R-C"};
  return names;
}

PipelineResult run_pipeline(const PipelineConfig& config, const Corpora& corp) {
  if (config.out_dir.empty()) raise(ErrorKind::Value, "run_pipeline: no output directory");
  std::filesystem::create_directories(config.out_dir);
  const std::string manifest = config.out_dir + "/manifest.tsv";

  PipelineResult result;
  auto run = [&](const std::string& name, bool generic, Stage st, Variant v,
                 const std::string& parent, const EncoderConfig& cfg) -> StageResult& {
    StageSpec s;
    s.name = name;
    s.generic_stage = generic;
    s.stage = st;
    s.variant = v;
    s.parent_dir = parent;
    s.config = cfg;
    s.epochs = config.epochs;
    s.lr = config.lr;
    s.lr_scale = config.lr_scale;
    s.dropout = config.dropout;
    s.batch = config.batch;
    s.seed = config.seed;
    s.stage2_fraction = config.stage2_fraction;
    s.olid_dev_fraction = config.olid_dev_fraction;
    s.solid_dev_fraction = config.solid_dev_fraction;
    s.out_dir = config.out_dir + "/" + name;
    StageResult r = run_stage(s, corp);
    append_run_manifest(manifest, generic ? kGenStageName : to_string(st), to_string(v), r);
    return result.stages[name] = std::move(r);
  };

  for (Variant v : {Variant::A, Variant::B}) {
    const std::string V = to_string(v);
    const EncoderConfig& cfg = v == Variant::A ? config.encoder_a : config.encoder_b;
    auto& gen = run(V + "-GEN", true, Stage::PT, v, "", cfg);
    run(V + "-FT", false, Stage::FT, v, gen.checkpoint_dir, cfg);
    auto& pt = run(V + "-PT", false, Stage::PT, v, gen.checkpoint_dir, cfg);
    auto& ptr = run(V + "-PT-R", false, Stage::PT_R, v, pt.checkpoint_dir, cfg);
    auto& ptc = run(V + "-PT-C", false, Stage::PT_C, v, pt.checkpoint_dir, cfg);
    run(V + "-PT-R-C", false, Stage::PT_R_C, v, ptr.checkpoint_dir, cfg);
    run(V + "-PT-C-C", false, Stage::PT_C_C, v, ptc.checkpoint_dir, cfg);
  }
  return result;
}

}  // namespace olens
