#include "olens/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "olens/error.hpp"

namespace olens {

namespace {
const char* kSpecialNames[kNumSpecials] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
}

Vocabulary::Vocabulary() {
  for (const char* s : kSpecialNames) add(s);
}

void Vocabulary::add(const std::string& token) {
  if (token_to_id_.count(token))
    raise(ErrorKind::Value, "vocabulary: duplicate token '" + token + "'");
  token_to_id_.emplace(token, size());
  id_to_token_.push_back(token);
}

int Vocabulary::id_of(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.count(std::string(token)) > 0;
}

const std::string& Vocabulary::token_of(int id) const {
  if (id < 0 || id >= size())
    raise(ErrorKind::Value,
          "vocabulary: id " + std::to_string(id) + " outside [0," + std::to_string(size()) + ")");
  return id_to_token_[static_cast<std::size_t>(id)];
}

int EncodedSequence::real_length() const {
  int n = 0;
  for (int m : attention_mask) n += m;
  return n;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    auto uc = static_cast<unsigned char>(ch);
    if (std::isalnum(uc)) {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocabulary build_vocab(const std::vector<std::string>& corpus, int max_size, int min_freq) {
  if (corpus.empty()) raise(ErrorKind::Value, "build_vocab: empty corpus");
  if (max_size < kNumSpecials)
    raise(ErrorKind::Value, "build_vocab: max_size " + std::to_string(max_size) +
                                " cannot hold the " + std::to_string(kNumSpecials) +
                                " reserved tokens");
  // std::map keeps candidates in lexicographic order, which settles frequency ties.
  std::map<std::string, long long> freq;
  for (const auto& line : corpus)
    for (auto& tok : tokenize(line)) ++freq[tok];

  std::vector<std::pair<std::string, long long>> ranked;
  ranked.reserve(freq.size());
  for (auto& [tok, n] : freq)
    if (n >= min_freq) ranked.emplace_back(tok, n);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocabulary vocab;
  const std::size_t keep = static_cast<std::size_t>(max_size - kNumSpecials);
  for (std::size_t i = 0; i < ranked.size() && i < keep; ++i) vocab.add(ranked[i].first);
  return vocab;
}

EncodedSequence encode(std::string_view text, const Vocabulary& vocab, int max_length) {
  if (max_length < 2)
    raise(ErrorKind::Value, "encode: max_length must fit [CLS] and [SEP], got " +
                                std::to_string(max_length));
  EncodedSequence seq;
  seq.ids.reserve(static_cast<std::size_t>(max_length));
  seq.ids.push_back(kCls);
  for (const auto& tok : tokenize(text)) {
    if (static_cast<int>(seq.ids.size()) >= max_length - 1) break;  // leave room for SEP
    seq.ids.push_back(vocab.id_of(tok));
  }
  seq.ids.push_back(kSep);
  const int real = static_cast<int>(seq.ids.size());
  seq.ids.resize(static_cast<std::size_t>(max_length), kPad);
  seq.attention_mask.assign(static_cast<std::size_t>(max_length), 0);
  for (int i = 0; i < real; ++i) seq.attention_mask[static_cast<std::size_t>(i)] = 1;
  seq.segment_ids.assign(static_cast<std::size_t>(max_length), 0);
  return seq;
}

std::string decode(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    const std::string& tok = vocab.token_of(id);  // validates range
    if (id < kNumSpecials) continue;
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

void save_vocab(const std::string& path, const Vocabulary& vocab) {
  std::ofstream f(path, std::ios::binary);
  if (!f) raise(ErrorKind::Io, "save_vocab: cannot open " + path);
  for (int id = 0; id < vocab.size(); ++id) f << vocab.token_of(id) << '\t' << id << '\n';
  if (!f) raise(ErrorKind::Io, "save_vocab: write failed for " + path);
}

Vocabulary load_vocab(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) raise(ErrorKind::Io, "load_vocab: cannot open " + path);
  Vocabulary vocab;
  std::string line;
  int row = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      raise(ErrorKind::Parse, "load_vocab: missing tab at row " + std::to_string(row));
    std::string tok = line.substr(0, tab);
    int id = 0;
    try {
      id = std::stoi(line.substr(tab + 1));
    } catch (const std::exception&) {
      raise(ErrorKind::Parse, "load_vocab: bad id at row " + std::to_string(row));
    }
    if (id != row)
      raise(ErrorKind::Parse, "load_vocab: ids must be dense and sorted; row " +
                                  std::to_string(row) + " has id " + std::to_string(id));
    if (row < kNumSpecials) {
      if (tok != kSpecialNames[row])
        raise(ErrorKind::Parse, "load_vocab: id " + std::to_string(row) + " must be " +
                                    kSpecialNames[row] + ", got '" + tok + "'");
    } else {
      vocab.add(tok);
    }
    ++row;
  }
  if (row < kNumSpecials) raise(ErrorKind::Parse, "load_vocab: reserved tokens missing");
  return vocab;
}

}  // namespace olens
