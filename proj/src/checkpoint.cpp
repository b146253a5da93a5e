#include "olens/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "olens/hash.hpp"

namespace fs = std::filesystem;

namespace olens {

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) raise(ErrorKind::Io, "cannot open " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) raise(ErrorKind::Io, "cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) raise(ErrorKind::Io, "write failed for " + path);
}

std::string shape_field(const std::vector<int>& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

std::vector<int> parse_shape_field(const std::string& s) {
  std::vector<int> shape;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t next = s.find('x', pos);
    if (next == std::string::npos) next = s.size();
    try {
      shape.push_back(std::stoi(s.substr(pos, next - pos)));
    } catch (const std::exception&) {
      raise(ErrorKind::Parse, "manifest: bad shape '" + s + "'");
    }
    pos = next + 1;
  }
  if (shape.empty()) raise(ErrorKind::Parse, "manifest: empty shape");
  return shape;
}

// Model with the right tensor shapes and zero values, ready to be filled.
Model<float> make_shell(const EncoderConfig& config, HeadKind head) {
  config.validate();
  Model<float> m;
  m.config = config;
  const int h = config.hidden;
  m.tok_emb = Tensor<float>::zeros({config.vocab, h}, true);
  m.pos_emb = Tensor<float>::zeros({config.max_positions, h}, true);
  if (config.use_segment_embeddings) m.seg_emb = Tensor<float>::zeros({2, h}, true);
  m.emb_ln_gain = Tensor<float>::zeros({h}, true);
  m.emb_ln_bias = Tensor<float>::zeros({h}, true);
  for (int i = 0; i < config.layers; ++i) {
    Model<float>::Layer l;
    l.wq = Tensor<float>::zeros({h, h}, true);
    l.bq = Tensor<float>::zeros({h}, true);
    l.wk = Tensor<float>::zeros({h, h}, true);
    l.bk = Tensor<float>::zeros({h}, true);
    l.wv = Tensor<float>::zeros({h, h}, true);
    l.bv = Tensor<float>::zeros({h}, true);
    l.wo = Tensor<float>::zeros({h, h}, true);
    l.bo = Tensor<float>::zeros({h}, true);
    l.ln1_gain = Tensor<float>::zeros({h}, true);
    l.ln1_bias = Tensor<float>::zeros({h}, true);
    l.w1 = Tensor<float>::zeros({h, config.ffn}, true);
    l.b1 = Tensor<float>::zeros({config.ffn}, true);
    l.w2 = Tensor<float>::zeros({config.ffn, h}, true);
    l.b2 = Tensor<float>::zeros({h}, true);
    l.ln2_gain = Tensor<float>::zeros({h}, true);
    l.ln2_bias = Tensor<float>::zeros({h}, true);
    m.layers.push_back(std::move(l));
  }
  m.head = head;
  switch (head) {
    case HeadKind::None:
      break;
    case HeadKind::Mlm:
      m.head_w = Tensor<float>::zeros({h, config.vocab}, true);
      m.head_b = Tensor<float>::zeros({config.vocab}, true);
      break;
    case HeadKind::Regression:
      m.head_w = Tensor<float>::zeros({h, 1}, true);
      m.head_b = Tensor<float>::zeros({1}, true);
      break;
    case HeadKind::Classification:
      m.head_w = Tensor<float>::zeros({h, 2}, true);
      m.head_b = Tensor<float>::zeros({2}, true);
      break;
  }
  return m;
}

}  // namespace

std::string format_double_roundtrip(double v) {
  for (int prec = 1; prec <= 17; ++prec) {
    std::ostringstream os;
    os.precision(prec);
    os << v;
    if (std::stod(os.str()) == v) return os.str();
  }
  raise(ErrorKind::Contract, "format_double_roundtrip: no representation found");
}

void save_tensors(const std::string& dir,
                  const std::vector<std::pair<std::string, Tensor<float>>>& tensors) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) raise(ErrorKind::Io, "cannot create directory " + dir + ": " + ec.message());
  std::ostringstream manifest;
  std::string weights;
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    manifest << name << '\t' << shape_field(t.shape()) << '\t' << offset << '\n';
    const auto vals = t.values();
    weights.append(reinterpret_cast<const char*>(vals.data()), vals.size() * sizeof(float));
    offset += vals.size() * sizeof(float);
  }
  write_file(dir + "/manifest.tsv", manifest.str());
  write_file(dir + "/weights.bin", weights);
}

std::vector<std::pair<std::string, Tensor<float>>> load_tensors(const std::string& dir) {
  const std::string blob = read_file(dir + "/weights.bin");
  std::istringstream manifest(read_file(dir + "/manifest.tsv"));
  std::vector<std::pair<std::string, Tensor<float>>> out;
  std::string line;
  std::size_t row = 0;
  std::size_t expected_offset = 0;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    auto t1 = line.find('\t');
    auto t2 = line.find('\t', t1 == std::string::npos ? t1 : t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos)
      raise(ErrorKind::Parse, dir + "/manifest.tsv: malformed row " + std::to_string(row));
    const std::string name = line.substr(0, t1);
    const std::vector<int> shape = parse_shape_field(line.substr(t1 + 1, t2 - t1 - 1));
    std::size_t offset = 0;
    try {
      offset = static_cast<std::size_t>(std::stoull(line.substr(t2 + 1)));
    } catch (const std::exception&) {
      raise(ErrorKind::Parse, dir + "/manifest.tsv: bad offset at row " + std::to_string(row));
    }
    if (offset != expected_offset)
      raise(ErrorKind::Parse, dir + "/manifest.tsv: offset " + std::to_string(offset) +
                                  " for " + name + ", expected " +
                                  std::to_string(expected_offset));
    Tensor<float> t = Tensor<float>::zeros(shape);
    const std::size_t bytes = t.numel() * sizeof(float);
    if (offset + bytes > blob.size())
      raise(ErrorKind::Parse, dir + "/weights.bin: truncated at tensor " + name);
    std::memcpy(t.mutable_values().data(), blob.data() + offset, bytes);
    out.emplace_back(name, std::move(t));
    expected_offset += bytes;
    ++row;
  }
  if (expected_offset != blob.size())
    raise(ErrorKind::Parse, dir + "/weights.bin: trailing bytes beyond manifest");
  return out;
}

void save_checkpoint(const std::string& dir, const Model<float>& model) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) raise(ErrorKind::Io, "cannot create directory " + dir + ": " + ec.message());

  const auto& c = model.config;
  std::ostringstream cfg;
  cfg << "variant\t" << to_string(c.variant) << '\n'
      << "hidden\t" << c.hidden << '\n'
      << "layers\t" << c.layers << '\n'
      << "heads\t" << c.heads << '\n'
      << "ffn\t" << c.ffn << '\n'
      << "vocab\t" << c.vocab << '\n'
      << "max_positions\t" << c.max_positions << '\n'
      << "dropout\t" << format_double_roundtrip(c.dropout) << '\n'
      << "use_segment_embeddings\t" << (c.use_segment_embeddings ? 1 : 0) << '\n'
      << "masking\t" << to_string(c.masking) << '\n'
      << "head\t" << to_string(model.head) << '\n';
  write_file(dir + "/config.tsv", cfg.str());
  save_tensors(dir, model.params());
}

Model<float> load_checkpoint(const std::string& dir) {
  // config.tsv
  std::map<std::string, std::string> kv;
  {
    std::istringstream in(read_file(dir + "/config.tsv"));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto tab = line.find('\t');
      if (tab == std::string::npos)
        raise(ErrorKind::Parse, dir + "/config.tsv: missing tab in '" + line + "'");
      kv[line.substr(0, tab)] = line.substr(tab + 1);
    }
  }
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) raise(ErrorKind::Parse, dir + "/config.tsv: missing key " + key);
    return it->second;
  };
  EncoderConfig config;
  try {
    config.variant = variant_from_string(need("variant"));
    config.hidden = std::stoi(need("hidden"));
    config.layers = std::stoi(need("layers"));
    config.heads = std::stoi(need("heads"));
    config.ffn = std::stoi(need("ffn"));
    config.vocab = std::stoi(need("vocab"));
    config.max_positions = std::stoi(need("max_positions"));
    config.dropout = std::stod(need("dropout"));
    config.use_segment_embeddings = std::stoi(need("use_segment_embeddings")) != 0;
    config.masking = masking_from_string(need("masking"));
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    raise(ErrorKind::Parse, dir + "/config.tsv: " + e.what());
  }
  HeadKind head = head_from_string(need("head"));
  Model<float> model = make_shell(config, head);

  // manifest.tsv + weights.bin
  const std::string blob = read_file(dir + "/weights.bin");
  std::istringstream manifest(read_file(dir + "/manifest.tsv"));
  auto params = model.params();
  std::string line;
  std::size_t row = 0;
  std::size_t expected_offset = 0;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    auto t1 = line.find('\t');
    auto t2 = line.find('\t', t1 == std::string::npos ? t1 : t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos)
      raise(ErrorKind::Parse, dir + "/manifest.tsv: malformed row " + std::to_string(row));
    const std::string name = line.substr(0, t1);
    const std::vector<int> shape = parse_shape_field(line.substr(t1 + 1, t2 - t1 - 1));
    std::size_t offset = 0;
    try {
      offset = static_cast<std::size_t>(std::stoull(line.substr(t2 + 1)));
    } catch (const std::exception&) {
      raise(ErrorKind::Parse, dir + "/manifest.tsv: bad offset at row " + std::to_string(row));
    }
    if (row >= params.size())
      raise(ErrorKind::Parse, dir + "/manifest.tsv: unexpected extra tensor " + name);
    auto& [expect_name, tensor] = params[row];
    if (name != expect_name)
      raise(ErrorKind::Parse, dir + "/manifest.tsv: tensor " + std::to_string(row) +
                                  " is '" + name + "', expected '" + expect_name + "'");
    if (shape != tensor.shape())
      raise(ErrorKind::Parse, dir + "/manifest.tsv: shape mismatch for " + name);
    if (offset != expected_offset)
      raise(ErrorKind::Parse, dir + "/manifest.tsv: offset " + std::to_string(offset) +
                                  " for " + name + ", expected " +
                                  std::to_string(expected_offset));
    const std::size_t bytes = tensor.numel() * sizeof(float);
    if (offset + bytes > blob.size())
      raise(ErrorKind::Parse, dir + "/weights.bin: truncated at tensor " + name);
    std::memcpy(tensor.mutable_values().data(), blob.data() + offset, bytes);
    expected_offset += bytes;
    ++row;
  }
  if (row != params.size())
    raise(ErrorKind::Parse, dir + "/manifest.tsv: has " + std::to_string(row) +
                                " tensors, model needs " + std::to_string(params.size()));
  if (expected_offset != blob.size())
    raise(ErrorKind::Parse, dir + "/weights.bin: trailing bytes beyond manifest");
  return model;
}

std::string checkpoint_hash(const std::string& dir) {
  std::uint64_t h = fnv1a(read_file(dir + "/config.tsv"));
  h = fnv1a(read_file(dir + "/manifest.tsv"), h);
  h = fnv1a(read_file(dir + "/weights.bin"), h);
  return hash_hex(h);
}

}  // namespace olens
