#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "olens/checkpoint.hpp"
#include "olens/encoder.hpp"
#include "olens/gradcheck.hpp"

using namespace olens;

namespace {

Vocabulary tiny_vocab() {
  return build_vocab({"alpha beta gamma delta epsilon zeta eta theta"}, 40, 1);
}

EncoderConfig tiny_config(Variant v, double dropout = 0.0) {
  auto c = EncoderConfig::for_variant(v, /*hidden=*/8, /*layers=*/2, /*heads=*/2,
                                      /*ffn=*/16, /*vocab=*/40, dropout);
  c.max_positions = 8;
  return c;
}

bool same_values(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a.values()[i] != b.values()[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("config validation") {
  CHECK_THROWS_AS(EncoderConfig::for_variant(Variant::A, 10, 2, 3), Error);  // 10 % 3
  CHECK_THROWS_AS(EncoderConfig::for_variant(Variant::A, 0), Error);
  CHECK_THROWS_AS(EncoderConfig::for_variant(Variant::A, 8, 1, 2, 16, 2000, 1.0), Error);
  auto a = EncoderConfig::for_variant(Variant::A);
  CHECK(a.use_segment_embeddings);
  CHECK(a.masking == MaskingPolicy::Static);
  auto b = EncoderConfig::for_variant(Variant::B);
  CHECK_FALSE(b.use_segment_embeddings);
  CHECK(b.masking == MaskingPolicy::Dynamic);
}

TEST_CASE("init determinism and variant structure") {
  auto cfg_a = tiny_config(Variant::A);
  auto m1 = init_model<float>(cfg_a, RngStream(42));
  auto m2 = init_model<float>(cfg_a, RngStream(42));
  auto p1 = m1.params(), p2 = m2.params();
  REQUIRE(p1.size() == p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i].first == p2[i].first);
    CHECK(same_values(p1[i].second, p2[i].second));
  }
  auto m3 = init_model<float>(cfg_a, RngStream(43));
  CHECK_FALSE(same_values(m3.tok_emb, m1.tok_emb));

  CHECK(m1.seg_emb.valid());
  CHECK(m1.seg_emb.shape() == std::vector<int>{2, 8});
  auto mb = init_model<float>(tiny_config(Variant::B), RngStream(42));
  CHECK_FALSE(mb.seg_emb.valid());
  CHECK(mb.params().size() + 1 == m1.params().size());
}

TEST_CASE("init statistics follow truncated normal(0, 0.02)") {
  auto cfg = EncoderConfig::for_variant(Variant::A, 64, 2, 4, 128, 2000);
  auto m = init_model<float>(cfg, RngStream(7));
  double sum = 0, sq = 0;
  std::size_t n = m.tok_emb.numel();
  for (float v : m.tok_emb.values()) {
    CHECK(std::abs(v) <= 0.04f);  // clipped at 2 sigma
    sum += v;
    sq += static_cast<double>(v) * v;
  }
  double mean = sum / static_cast<double>(n);
  double stddev = std::sqrt(sq / static_cast<double>(n) - mean * mean);
  CHECK(std::abs(mean) < 0.002);
  CHECK(stddev > 0.012);
  CHECK(stddev < 0.028);
  for (float v : m.emb_ln_gain.values()) CHECK(v == 1.0f);
  for (float v : m.layers[0].bq.values()) CHECK(v == 0.0f);
}

TEST_CASE("parameter count matches the closed form") {
  auto cfg = EncoderConfig::for_variant(Variant::A, 32, 2, 4, 64, 1000);
  // Hand count: tok 1000*32 + pos 128*32 + seg 2*32 + emb ln 64
  //   per layer: 4*(1024+32) + 64 + (32*64+64) + (64*32+32) + 64 = 8544; x2 = 17088
  const long long expect_encoder = 32000 + 4096 + 64 + 64 + 17088;
  CHECK(param_count(cfg, HeadKind::None) == expect_encoder);
  CHECK(param_count(cfg, HeadKind::Mlm) == expect_encoder + 32 * 1000 + 1000);
  CHECK(param_count(cfg, HeadKind::Regression) == expect_encoder + 33);
  CHECK(param_count(cfg, HeadKind::Classification) == expect_encoder + 66);

  auto m = init_model<float>(cfg, RngStream(1), HeadKind::Classification);
  long long actual = 0;
  for (const auto& [name, t] : m.params()) actual += static_cast<long long>(t.numel());
  CHECK(actual == param_count(cfg, HeadKind::Classification));
}

TEST_CASE("forward pass contracts") {
  auto vocab = tiny_vocab();
  auto cfg = tiny_config(Variant::A);
  auto m = init_model<float>(cfg, RngStream(42), HeadKind::Classification);
  auto seq = encode("alpha beta gamma", vocab, 8);

  SUBCASE("attention rows are distributions; PAD block is zero") {
    ForwardTrace<float> trace;
    auto hidden = encode_sequence(m, seq, Mode::Eval, RngStream(0), &trace);
    CHECK(hidden.shape() == std::vector<int>{8, 8});
    const int real = seq.real_length();
    CHECK(trace.real_len == real);
    for (int li = 0; li < cfg.layers; ++li)
      for (int hi = 0; hi < cfg.heads; ++hi) {
        auto padded = attention_padded(trace, li, hi, 8);
        for (int i = 0; i < 8; ++i) {
          double row_sum = 0;
          for (int j = 0; j < 8; ++j) {
            float w = padded[static_cast<std::size_t>(i) * 8 + j];
            CHECK(w >= 0.0f);
            if (i >= real || j >= real) CHECK(w == 0.0f);
            row_sum += w;
          }
          if (i < real) CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-6));
        }
      }
  }

  SUBCASE("PAD rows of the padded view are zero") {
    auto hidden = encode_sequence(m, seq);
    for (int i = seq.real_length(); i < 8; ++i)
      for (int j = 0; j < 8; ++j) CHECK(hidden.at(i, j) == 0.0f);
  }

  SUBCASE("eval forward is bit-identical across calls") {
    auto h1 = encode_sequence(m, seq);
    auto h2 = encode_sequence(m, seq);
    CHECK(same_values(h1, h2));
  }

  SUBCASE("train-mode dropout changes the output but is reproducible by stream") {
    auto cfg_d = tiny_config(Variant::A, 0.3);
    auto md = init_model<float>(cfg_d, RngStream(42));
    auto h_eval = encode_prefix(md, seq, Mode::Eval, RngStream(0));
    auto h1 = encode_prefix(md, seq, Mode::Train, RngStream(5).fork("drop:x"));
    auto h2 = encode_prefix(md, seq, Mode::Train, RngStream(5).fork("drop:x"));
    auto h3 = encode_prefix(md, seq, Mode::Train, RngStream(5).fork("drop:y"));
    CHECK(same_values(h1, h2));
    CHECK_FALSE(same_values(h1, h_eval));
    CHECK_FALSE(same_values(h1, h3));
  }

  SUBCASE("bad inputs") {
    auto short_seq = encode("alpha", vocab, 4);
    CHECK_THROWS_AS(encode_sequence(m, short_seq), Error);  // length != max_positions
    auto bad = seq;
    bad.ids[1] = cfg.vocab;  // out of vocabulary range
    CHECK_THROWS_AS(encode_sequence(m, bad), Error);
  }
}

TEST_CASE("permutation equivariance with zeroed position information") {
  auto vocab = tiny_vocab();
  auto cfg = tiny_config(Variant::A);
  auto m = init_model<float>(cfg, RngStream(42));
  for (auto& v : m.pos_emb.mutable_values()) v = 0.f;
  for (auto& v : m.seg_emb.mutable_values()) v = 0.f;

  auto s1 = encode("alpha beta gamma", vocab, 8);
  auto s2 = encode("gamma alpha beta", vocab, 8);  // permuted interior
  auto h1 = encode_prefix(m, s1, Mode::Eval, RngStream(0));
  auto h2 = encode_prefix(m, s2, Mode::Eval, RngStream(0));
  // s1 real tokens: CLS alpha beta gamma SEP; s2: CLS gamma alpha beta SEP.
  // Row mapping s1 -> s2: 0->0, 1->2, 2->3, 3->1, 4->4.
  const int map[5] = {0, 2, 3, 1, 4};
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 8; ++j)
      CHECK(h1.at(i, j) == doctest::Approx(h2.at(map[i], j)).epsilon(1e-5));
}

TEST_CASE("sentence representation") {
  auto vocab = tiny_vocab();
  auto m = init_model<float>(tiny_config(Variant::B), RngStream(42));
  auto seq = encode("alpha beta", vocab, 8);
  auto hidden = encode_prefix(m, seq, Mode::Eval, RngStream(0));
  auto rep = sentence_representation(hidden);
  REQUIRE(rep.shape() == std::vector<int>{8});
  for (int j = 0; j < 8; ++j) CHECK(rep.at(j) == hidden.at(0, j));

  auto seq2 = encode("alpha gamma", vocab, 8);  // change a non-CLS token
  auto rep2 = sentence_representation(encode_prefix(m, seq2, Mode::Eval, RngStream(0)));
  bool any_diff = false;
  for (int j = 0; j < 8; ++j) any_diff = any_diff || rep.at(j) != rep2.at(j);
  CHECK(any_diff);
}

TEST_CASE("heads") {
  auto vocab = tiny_vocab();
  auto cfg = tiny_config(Variant::A);
  auto seq = encode("alpha beta", vocab, 8);

  SUBCASE("mlm logits shape and wrong-head error") {
    auto m = init_model<float>(cfg, RngStream(42), HeadKind::Mlm);
    auto hidden = encode_sequence(m, seq);
    auto logits = mlm_logits(m, hidden);
    CHECK(logits.shape() == std::vector<int>{8, 40});
    auto at = mlm_logits_at(m, encode_prefix(m, seq, Mode::Eval, RngStream(0)), {1, 2});
    CHECK(at.shape() == std::vector<int>{2, 40});
    auto rep = sentence_representation(hidden);
    CHECK_THROWS_AS(regress(m, rep), Error);
    CHECK_THROWS_AS(classify(m, rep), Error);
  }

  SUBCASE("regression head: zero weights give 0.5, output in (0,1)") {
    auto m = init_model<float>(cfg, RngStream(42), HeadKind::Regression);
    auto rep = sentence_representation(encode_sequence(m, seq));
    for (auto& v : m.head_w.mutable_values()) v = 0.f;
    CHECK(regress(m, rep).item() == doctest::Approx(0.5));
    auto m2 = init_model<float>(cfg, RngStream(9), HeadKind::Regression);
    float y = regress(m2, rep).item();
    CHECK(y > 0.0f);
    CHECK(y < 1.0f);
  }

  SUBCASE("classification head: zero head predicts NOT by tie-break") {
    auto m = init_model<float>(cfg, RngStream(42), HeadKind::Classification);
    for (auto& v : m.head_w.mutable_values()) v = 0.f;
    auto rep = sentence_representation(encode_sequence(m, seq));
    auto logits = classify(m, rep);
    CHECK(logits.at(0) == 0.0f);
    CHECK(logits.at(1) == 0.0f);
    CHECK(predicted_label(logits) == 0);
    auto probs = softmax(logits, -1);
    CHECK(probs.at(0) + probs.at(1) == doctest::Approx(1.0));
  }
}

TEST_CASE("swap_head") {
  auto cfg = tiny_config(Variant::A);
  auto vocab = tiny_vocab();
  auto seq = encode("alpha beta gamma", vocab, 8);

  SUBCASE("regression -> classification preserves encoder bits") {
    auto m = init_model<float>(cfg, RngStream(42), HeadKind::Regression);
    auto m2 = swap_head(m, HeadKind::Classification, RngStream(43));
    CHECK(m2.head == HeadKind::Classification);
    CHECK(m2.head_w.shape() == std::vector<int>{8, 2});
    auto p1 = m.encoder_params(), p2 = m2.encoder_params();
    REQUIRE(p1.size() == p2.size());
    for (std::size_t i = 0; i < p1.size(); ++i) CHECK(same_values(p1[i].second, p2[i].second));
  }

  SUBCASE("classification -> classification keeps the head") {
    auto m = init_model<float>(cfg, RngStream(42), HeadKind::Classification);
    auto m2 = swap_head(m, HeadKind::Classification, RngStream(99));
    CHECK(same_values(m.head_w, m2.head_w));
    CHECK(same_values(m.head_b, m2.head_b));
  }

  SUBCASE("mlm -> classification leaves encoder output identical") {
    auto m = init_model<float>(cfg, RngStream(42), HeadKind::Mlm);
    auto before = encode_sequence(m, seq);
    auto m2 = swap_head(m, HeadKind::Classification, RngStream(7));
    auto after = encode_sequence(m2, seq);
    CHECK(same_values(before, after));
  }

  SUBCASE("swapped model is independent storage") {
    auto m = init_model<float>(cfg, RngStream(42), HeadKind::Mlm);
    auto m2 = swap_head(m, HeadKind::Classification, RngStream(7));
    m2.tok_emb.mutable_values()[0] += 1.f;
    CHECK(m.tok_emb.values()[0] != m2.tok_emb.values()[0]);
  }
}

TEST_CASE("checkpoint round-trip") {
  namespace fs = std::filesystem;
  const std::string dir = "/tmp/olens_ckpt_test";
  fs::remove_all(dir);

  auto cfg = tiny_config(Variant::A, 0.1);
  auto m = init_model<float>(cfg, RngStream(42), HeadKind::Mlm);
  save_checkpoint(dir, m);

  SUBCASE("load restores every tensor and the config") {
    auto r = load_checkpoint(dir);
    CHECK(r.config.hidden == cfg.hidden);
    CHECK(r.config.dropout == cfg.dropout);
    CHECK(r.config.variant == Variant::A);
    CHECK(r.head == HeadKind::Mlm);
    auto p1 = m.params(), p2 = r.params();
    REQUIRE(p1.size() == p2.size());
    for (std::size_t i = 0; i < p1.size(); ++i) {
      CHECK(p1[i].first == p2[i].first);
      CHECK(same_values(p1[i].second, p2[i].second));
    }
  }

  SUBCASE("load then save is byte-identical") {
    auto read_bytes = [](const std::string& p) {
      std::ifstream f(p, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(f), {});
    };
    auto r = load_checkpoint(dir);
    const std::string dir2 = "/tmp/olens_ckpt_test2";
    fs::remove_all(dir2);
    save_checkpoint(dir2, r);
    for (const char* name : {"config.tsv", "manifest.tsv", "weights.bin"})
      CHECK(read_bytes(dir + "/" + name) == read_bytes(dir2 + "/" + name));
    CHECK(checkpoint_hash(dir) == checkpoint_hash(dir2));
    fs::remove_all(dir2);
  }

  SUBCASE("hash changes when a weight changes") {
    auto before = checkpoint_hash(dir);
    auto r = load_checkpoint(dir);
    r.tok_emb.mutable_values()[0] += 1.0f;
    const std::string dir2 = "/tmp/olens_ckpt_test3";
    fs::remove_all(dir2);
    save_checkpoint(dir2, r);
    CHECK(checkpoint_hash(dir2) != before);
    fs::remove_all(dir2);
  }

  SUBCASE("corrupt manifest is rejected") {
    auto bytes = [&]() {
      std::ifstream f(dir + "/manifest.tsv", std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(f), {});
    }();
    std::ofstream(dir + "/manifest.tsv", std::ios::binary) << "bogus\t8\t0\n" << bytes;
    CHECK_THROWS_AS(load_checkpoint(dir), Error);
  }

  fs::remove_all(dir);
}

TEST_CASE("double round-trip formatting") {
  for (double v : {0.1, 0.5, 2e-5, 1e-5, 0.0, 1.0 / 3.0, 0.215, 0.691}) {
    CHECK(std::stod(format_double_roundtrip(v)) == v);
  }
  CHECK(format_double_roundtrip(0.1) == "0.1");
  CHECK(format_double_roundtrip(2e-5) == "2e-05");
}

TEST_CASE("full-model gradient check in double precision") {
  auto vocab = tiny_vocab();
  auto cfg = tiny_config(Variant::A, 0.0);
  auto m = init_model<double>(cfg, RngStream(42), HeadKind::Classification);
  auto seq = encode("alpha beta gamma", vocab, 8);

  std::vector<NamedParam> params;
  for (auto& [name, t] : m.params()) params.push_back({name, t});
  auto loss_fn = [&]() {
    auto hidden = encode_prefix(m, seq, Mode::Eval, RngStream(0));
    auto logits = classify(m, sentence_representation(hidden));
    return cross_entropy(reshape(logits, {1, 2}), {1});
  };
  auto report = gradient_check(params, loss_fn, 1e-4);
  CHECK(report.checked > 0);
  CHECK(report.max_rel_err < 1e-3);
}
