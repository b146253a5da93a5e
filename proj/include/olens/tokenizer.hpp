#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace olens {

// Reserved vocabulary ids.
inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kCls = 2;
inline constexpr int kSep = 3;
inline constexpr int kMask = 4;
inline constexpr int kNumSpecials = 5;

// Word-level vocabulary. Ids are dense in [0, V) with the five specials fixed
// at 0..4; immutable once built.
class Vocabulary {
 public:
  Vocabulary();  // specials only

  int id_of(std::string_view token) const;  // UNK for unknown tokens
  const std::string& token_of(int id) const;
  int size() const { return static_cast<int>(id_to_token_.size()); }
  bool contains(std::string_view token) const;

  void add(const std::string& token);  // build-time only

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

struct EncodedSequence {
  std::vector<int> ids;             // length == max_length
  std::vector<int> attention_mask;  // 1 at real tokens, 0 at PAD
  std::vector<int> segment_ids;     // all zeros for single-sentence input

  int length() const { return static_cast<int>(ids.size()); }
  int real_length() const;  // count of mask == 1 positions
};

// Lowercased split on any non-alphanumeric byte.
std::vector<std::string> tokenize(std::string_view text);

// Most frequent tokens kept up to max_size - 5, ties broken lexicographically,
// tokens below min_freq dropped. max_size == 5 yields a specials-only
// vocabulary; an empty corpus is an error.
Vocabulary build_vocab(const std::vector<std::string>& corpus, int max_size, int min_freq = 1);

// [CLS] + token ids + [SEP], truncated to max_length (tail tokens dropped,
// CLS and SEP always kept), PAD-filled to exactly max_length.
EncodedSequence encode(std::string_view text, const Vocabulary& vocab, int max_length = 128);

// Space-joined tokens, specials omitted.
std::string decode(const std::vector<int>& ids, const Vocabulary& vocab);

// TSV `token<TAB>id`, one row per token, sorted by id.
void save_vocab(const std::string& path, const Vocabulary& vocab);
Vocabulary load_vocab(const std::string& path);

}  // namespace olens
