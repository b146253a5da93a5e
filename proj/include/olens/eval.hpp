#pragma once

#include <string>
#include <vector>

#include "olens/training.hpp"

namespace olens {

// ---------------------------------------------------------------------------
// Confusion matrix and derived metrics
// ---------------------------------------------------------------------------

struct ConfusionMatrix {
  // counts[gold][pred], labels 0 = NOT / 1 = OFF.
  long long counts[2][2] = {{0, 0}, {0, 0}};
  long long total() const {
    return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1];
  }
};

// Tallies gold/pred pairs; mismatched lengths or labels outside {0,1} raise.
// Empty inputs yield the zero matrix.
ConfusionMatrix confusion(const std::vector<int>& gold, const std::vector<int>& pred);

struct Metrics {
  double accuracy = 0.0;  // all values in percent
  double precision[2] = {0.0, 0.0};
  double recall[2] = {0.0, 0.0};
  double f1[2] = {0.0, 0.0};
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  bool degenerate = false;  // some 0/0 ratio was coerced to 0
};

// Per-class precision/recall/F1 plus unweighted macro averages, as
// percentages. Undefined 0/0 ratios become 0 and set the degenerate flag.
Metrics compute_metrics(const ConfusionMatrix& cm);

// ---------------------------------------------------------------------------
// Masked-LM perplexity
// ---------------------------------------------------------------------------

// exp(mean cross-entropy) over every masked position in the corpus. Masks are
// drawn from `mask_rng` keyed by example id (static policy), so the score is
// reproducible and independent of training streams. Log-sum-exp runs in
// double precision regardless of model precision. Raises if no position ends
// up masked.
double perplexity(const Model<float>& model, const std::vector<EncodedExample>& examples,
                  const RngStream& mask_rng, double mask_rate = 0.15);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct ReportRow {
  std::string name;
  double acc_dev = 0.0;
  Metrics test;
  int epochs = 0;  // best epoch of the final stage
};

// Fixed-width table: Model | ACC_DEV | ACC_TST | P_TST | R_TST | F1_TST |
// Epochs, three decimals, one row per model in input order.
std::string render_report(const std::vector<ReportRow>& rows);

std::string render_confusion(const ConfusionMatrix& cm);

struct Misclassified {
  std::string id;
  std::string text;
  int gold = 0;
  int pred = 0;
};

// id / gold -> pred / text listing, truncated to `cap` rows with a note.
std::string render_misclassified(const std::vector<Misclassified>& rows, std::size_t cap = 20);

// Machine-readable export: model<TAB>metric<TAB>value, six decimals.
std::string metrics_tsv(const std::vector<ReportRow>& rows);

}  // namespace olens
