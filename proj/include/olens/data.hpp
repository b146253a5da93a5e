#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "olens/rng.hpp"

namespace olens {

inline constexpr int kNot = 0;
inline constexpr int kOff = 1;

inline const char* label_name(int label) { return label == kOff ? "OFF" : "NOT"; }

struct RawTweet {
  std::string id;
  std::string text;
  std::optional<int> gold_label;  // kNot / kOff
  std::optional<double> avg_conf;
  std::optional<double> conf_std;
};

enum class TargetKind { None, Class, Confidence };

struct LabeledExample {
  std::string id;  // qualified as "source:id" so ids are unique across sources
  std::string text;
  TargetKind kind = TargetKind::None;
  double target = 0.0;  // class index or confidence, depending on kind
};

// Pipeline stages. FT fine-tunes the generic baseline directly; the PT chain
// pretrains on everything, branches into regression/classification on the
// confidence corpus, then finishes on gold labels; E is the ensemble split.
enum class Stage { FT, PT, PT_R, PT_C, PT_R_C, PT_C_C, E };

const char* to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct SplitPlan {
  Stage stage = Stage::FT;
  double olid_dev_fraction = 0.1;
  double solid_dev_fraction = 0.005;
  double threshold = 0.5;
  std::uint64_t seed = 42;
};

struct SplitResult {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> dev;  // empty for PT
  std::map<std::string, long long> counts;
};

// dev = floor(dev_fraction * n); train = n - dev. This single rule reproduces
// every published count: 13,240 -> 11,916/1,324 at 0.1 and
// 8,996,730 -> 8,951,747/44,983 at 0.005.
std::pair<long long, long long> slice_counts(long long n, double dev_fraction);

// TSV with header `id<TAB>tweet<TAB>subtask_a`; labels NOT/OFF.
std::vector<RawTweet> load_olid(const std::string& path);

// text TSV `id<TAB>text` joined 1:1 against labels TSV `id<TAB>average<TAB>std`.
std::vector<RawTweet> load_solid(const std::string& text_path, const std::string& labels_path);

// Exact-match duplicates on whitespace-trimmed text removed; first occurrence
// kept; order preserved. Returns (kept, removed_count).
std::pair<std::vector<RawTweet>, long long> dedup(const std::vector<RawTweet>& tweets);

// OFF iff avg_conf strictly greater than threshold.
int threshold_label(const RawTweet& tweet, double threshold = 0.5);

// Builds the stage's train/dev lists. `solid` must already be deduplicated for
// every stage except PT, which trains on the raw corpus. All stages share one
// seeded shuffle per source, so e.g. FT's SOLID slice equals PT-R's train rows.
SplitResult make_split(const SplitPlan& plan, const std::vector<RawTweet>& olid_train,
                       const std::vector<RawTweet>& olid_test,
                       const std::vector<RawTweet>& solid,
                       const std::vector<RawTweet>& task_test);

// TSV `id<TAB>split<TAB>target`.
void write_split_manifest(const std::string& path, const SplitResult& result);

// ---------------------------------------------------------------------------
// Synthetic corpus (desk-scale stand-in for the real datasets)
// ---------------------------------------------------------------------------

struct SyntheticData {
  std::vector<RawTweet> olid_train;  // n/2 rows, gold labels
  std::vector<RawTweet> olid_test;   // n/20 rows, gold labels
  std::vector<RawTweet> solid;       // n rows, confidence labels, duplicates injected
  std::vector<RawTweet> task_test;   // n/10 rows, gold labels
  std::vector<std::string> generic;  // n/2 plain sentences for the generic baseline
};

struct SyntheticSpec {
  long long n = 2000;       // SOLID row count; other corpora scale from it
  double dup_rate = 0.01;   // fraction of SOLID rows duplicating an earlier row
  double off_rate = 0.33;   // offensive fraction in every labeled corpus
  std::uint64_t seed = 42;
};

// Templated sentences over a small closed vocabulary. Offensive rows carry one
// of the marker tokens so the class is learnable by a small model; confidence
// values are cleanly separated around 0.5. All rows are unique except the
// intentional duplicates, so dedup removes exactly those.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

// Every text in the bundle, in a fixed order, for vocabulary construction.
std::vector<std::string> all_texts(const SyntheticData& data);

}  // namespace olens
