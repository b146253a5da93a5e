#pragma once

#include <string>
#include <utility>
#include <vector>

#include "olens/training.hpp"

namespace olens {

// One linear decoder over the concatenation of every member's sentence
// representation. Members keep their own heads, but the decoder reads the
// encoder output directly, so any head kind can join.
struct EnsembleMember {
  std::string name;
  std::string source_dir;  // checkpoint it was loaded from; empty = in-memory
  std::string hash;        // content hash of source_dir at attach time
  Model<float> model;
};

struct EnsembleModel {
  std::vector<EnsembleMember> members;
  Tensor<float> decoder_w;  // {sum of member hidden sizes, 2}
  Tensor<float> decoder_b;  // {2}
  double dropout = 0.1;
  bool freeze_members = false;

  int concat_dim() const;
  EnsembleModel clone() const;
};

inline constexpr int kEnsembleMemberCount = 6;

// Assembles an ensemble from in-memory models. The canonical member count is
// six; other counts need allow_any_count (the CLI --members override).
EnsembleModel make_ensemble(std::vector<EnsembleMember> members, double dropout,
                            bool freeze_members, const RngStream& rng,
                            bool allow_any_count = false);

// Same, loading each (name, checkpoint dir) pair from disk.
EnsembleModel build_ensemble(const std::vector<std::pair<std::string, std::string>>& members,
                             double dropout, bool freeze_members, const RngStream& rng,
                             bool allow_any_count = false);

// Member representations -> concat -> dropout -> linear decoder. Frozen
// members always run their internal dropout in eval mode.
Tensor<float> ensemble_logits(const EnsembleModel& ens, const EncodedSequence& seq, Mode mode,
                              const RngStream& drop_rng);

std::vector<int> ensemble_predict(const EnsembleModel& ens,
                                  const std::vector<EncodedExample>& examples);

double ensemble_accuracy(const EnsembleModel& ens, const std::vector<EncodedExample>& dev);

struct EnsembleSpec {
  std::string name = "E";
  int epochs = 10;
  double lr = 2e-5;
  double lr_scale = 1.0;
  double dropout = 0.1;
  bool freeze_members = false;
  int batch = 16;
  std::uint64_t seed = 42;
  double olid_dev_fraction = 0.1;
  std::string out_dir;
};

struct EnsembleResult {
  std::string name;
  std::string checkpoint_dir;
  std::string checkpoint_hash;
  std::vector<double> dev_metric_trace;  // accuracy %, per epoch
  std::vector<double> train_loss_trace;
  int best_epoch = 0;
  double best_metric = 0.0;
};

// One epoch over pre-encoded examples; mirrors the single-model loop but
// updates the decoder plus (when unfrozen) member encoders.
double ensemble_epoch(EnsembleModel& ens, const std::vector<EncodedExample>& examples,
                      AdamState& opt, int epoch, int batch_size, const RngStream& run_rng,
                      const std::string& run_label);

// Trains on the ensemble split of the gold-label corpus, keeps the
// highest-dev-accuracy epoch (earliest on ties), leaves `ens` at that state,
// and saves it under spec.out_dir.
EnsembleResult train_ensemble(const EnsembleSpec& spec, EnsembleModel& ens,
                              const Corpora& corpora);

// Directory layout: ensemble.tsv (member references + hashes + dropout +
// freeze flag), decoder tensors in the standard manifest/weights format, and
// — for ensembles whose members trained or have no source checkpoint —
// members/<name>/ checkpoints. Frozen members loaded from disk stay external
// references, stored once and resolved against `root` (default: the
// ensemble's parent directory) with their hash re-verified.
void save_ensemble(const std::string& dir, const EnsembleModel& ens);
EnsembleModel load_ensemble(const std::string& dir, const std::string& root = "");

// FNV-1a 64 hex digest over ensemble.tsv, manifest.tsv and weights.bin; member
// weights are covered through the recorded member hashes.
std::string ensemble_hash(const std::string& dir);

}  // namespace olens
