#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "olens/data.hpp"
#include "olens/encoder.hpp"
#include "olens/tokenizer.hpp"

namespace olens {

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

using NamedParams = std::vector<std::pair<std::string, Tensor<float>>>;

struct AdamState {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long t = 0;
  // First/second moments per parameter name, kept in double for accuracy.
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;
};

// Standard bias-corrected Adam update, reading each tensor's accumulated grad.
// Parameters without an allocated grad are treated as zero-gradient.
void adam_step(NamedParams& params, AdamState& state);
void zero_grads(NamedParams& params);

// ---------------------------------------------------------------------------
// MLM masking
// ---------------------------------------------------------------------------

struct MaskedExample {
  EncodedSequence seq;       // ids with MASK / random / kept substitutions
  std::vector<int> targets;  // original id at selected positions, -1 elsewhere
  int selected = 0;
};

// Each eligible token (non-special, non-PAD) is selected with probability
// `rate`; of the selected, 80% become MASK, 10% a random vocabulary token,
// 10% stay unchanged. Static policy draws from a stream keyed by example id
// only (identical every epoch); dynamic keys by (id, epoch).
MaskedExample mask_tokens(const EncodedSequence& seq, double rate, MaskingPolicy policy,
                          const std::string& example_id, int epoch, const RngStream& base,
                          int vocab_size);

// ---------------------------------------------------------------------------
// Epoch loop
// ---------------------------------------------------------------------------

struct EncodedExample {
  std::string id;
  EncodedSequence seq;
  TargetKind kind = TargetKind::None;
  double target = 0.0;
};

std::vector<EncodedExample> encode_examples(const std::vector<LabeledExample>& rows,
                                            const Vocabulary& vocab, int max_length);

// One seeded-shuffle pass of mini-batch training. Returns the mean loss over
// contributing examples (MLM examples with no masked position are skipped).
// run_label scopes the RNG forks so stages never share streams.
double run_epoch(Model<float>& model, const std::vector<EncodedExample>& examples,
                 HeadKind objective, AdamState& opt, int epoch, int batch_size,
                 double mask_rate, const RngStream& run_rng, const std::string& run_label);

// Eval-mode accuracy in percent. Classification heads compare argmax to the
// class target; regression heads threshold both prediction and target at 0.5.
double evaluate_accuracy(const Model<float>& model, const std::vector<EncodedExample>& dev);

// Predicted labels (0/1) for every example, eval mode.
std::vector<int> predict_labels(const Model<float>& model,
                                const std::vector<EncodedExample>& examples);

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

// GEN is the generic-corpus MLM baseline standing in for a published
// checkpoint; it feeds FT and PT as parent.
inline constexpr const char* kGenStageName = "GEN";

struct Corpora {
  Vocabulary vocab;
  int max_length = 128;
  std::vector<RawTweet> olid_train, olid_test, task_test;
  std::vector<RawTweet> solid_raw, solid_dedup;
  std::vector<std::string> generic;
  long long dedup_removed = 0;
};

// Synthetic corpora + vocabulary over all their texts.
Corpora prepare_corpora(const SyntheticSpec& spec, int vocab_cap, int min_freq, int max_length);

// Real-file corpora; the task test file repeats the labeled-tweet format, and
// generic_path (optional, one sentence per line) feeds the GEN baseline.
Corpora load_corpora(const std::string& olid_train_path, const std::string& olid_test_path,
                     const std::string& solid_text_path, const std::string& solid_labels_path,
                     const std::string& task_test_path, const std::string& generic_path,
                     int vocab_cap, int min_freq, int max_length);

struct StageSpec {
  std::string name;  // stage label for checkpoints/manifest, e.g. "A-PT-C-C" or "A-GEN"
  bool generic_stage = false;  // GEN: MLM over the generic corpus
  Stage stage = Stage::FT;     // ignored when generic_stage
  Variant variant = Variant::A;
  std::string parent_dir;  // empty = init from config (GEN/FT/PT only)
  EncoderConfig config;    // used when parent_dir is empty
  int epochs = 10;
  double lr = 2e-5;
  double lr_scale = 1.0;  // desk-scale multiplier; effective lr = lr * lr_scale
  double dropout = 0.1;
  int batch = 16;
  std::uint64_t seed = 42;
  double mask_rate = 0.15;
  double stage2_fraction = 1.0;  // PT-R/PT-C train subset for the ablation
  // Dev fractions for the split plan; MLM stages reuse the confidence-corpus
  // fraction for their internal perplexity holdout (at least one row). Small
  // runs should raise it so epoch selection sees more than a handful of rows.
  double olid_dev_fraction = 0.1;
  double solid_dev_fraction = 0.005;
  std::string out_dir;
};

struct StageResult {
  std::string name;
  std::string checkpoint_dir;
  std::string checkpoint_hash;
  std::vector<double> dev_metric_trace;  // accuracy % or perplexity, per epoch
  std::vector<double> train_loss_trace;
  int best_epoch = 0;  // 1-based
  double best_metric = 0.0;
  bool metric_is_perplexity = false;
};

HeadKind objective_for(Stage stage);

// Trains one stage: resolves the parent checkpoint (bit-preserving swap_head
// when the head kind changes), best-epoch selection on the stage metric
// (HIGHEST dev accuracy, or LOWEST held-out perplexity for MLM stages, ties to
// the earliest epoch), and saves the best checkpoint to spec.out_dir.
StageResult run_stage(const StageSpec& spec, const Corpora& corpora);

// Appends one row per epoch:
// stage<TAB>variant<TAB>epoch<TAB>dev_metric<TAB>checkpoint_hash<TAB>train_loss
void append_run_manifest(const std::string& path, const std::string& stage,
                         const std::string& variant, const StageResult& result);

struct PipelineConfig {
  EncoderConfig encoder_a = EncoderConfig::for_variant(Variant::A);
  EncoderConfig encoder_b = EncoderConfig::for_variant(Variant::B);
  int epochs = 10;
  double lr = 2e-5;
  double lr_scale = 1.0;
  double dropout = 0.1;
  int batch = 16;
  std::uint64_t seed = 42;
  double stage2_fraction = 1.0;
  double olid_dev_fraction = 0.1;
  double solid_dev_fraction = 0.005;
  std::string out_dir;
};

// The six individual models, in the fixed order the ensemble expects.
const std::vector<std::string>& individual_model_names();

struct PipelineResult {
  std::map<std::string, StageResult> stages;  // keyed by stage name, GEN/PT included
};

// GEN -> {FT, PT -> {PT-R -> PT-R-C, PT-C -> PT-C-C}} for both variants,
// writing every stage's epochs to <out_dir>/manifest.tsv.
PipelineResult run_pipeline(const PipelineConfig& config, const Corpora& corpora);

}  // namespace olens
