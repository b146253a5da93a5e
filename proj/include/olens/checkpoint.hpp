#pragma once

#include <string>
#include <utility>
#include <vector>

#include "olens/encoder.hpp"

namespace olens {

// Checkpoint directory layout:
//   config.tsv    key<TAB>value, fixed key order
//   manifest.tsv  tensor_name<TAB>shape<TAB>byte_offset, canonical param order
//   weights.bin   little-endian IEEE-754 float32, concatenated in manifest order
// Loading then saving reproduces identical bytes.
void save_checkpoint(const std::string& dir, const Model<float>& model);
Model<float> load_checkpoint(const std::string& dir);

// The manifest.tsv + weights.bin half of the format on its own, for weight
// collections that are not encoder models (e.g. the ensemble decoder).
void save_tensors(const std::string& dir,
                  const std::vector<std::pair<std::string, Tensor<float>>>& tensors);
std::vector<std::pair<std::string, Tensor<float>>> load_tensors(const std::string& dir);

// FNV-1a 64 hex digest over config.tsv, manifest.tsv and weights.bin bytes.
std::string checkpoint_hash(const std::string& dir);

// Shortest decimal text that parses back to exactly v.
std::string format_double_roundtrip(double v);

}  // namespace olens
