#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "olens/eval.hpp"

using namespace olens;

TEST_CASE("confusion tallies") {
  SUBCASE("hand-built pairs land in the right cells") {
    // gold, pred: one NOT hit, one NOT->OFF slip, two OFF hits.
    ConfusionMatrix cm = confusion({0, 0, 1, 1}, {0, 1, 1, 1});
    CHECK(cm.counts[0][0] == 1);
    CHECK(cm.counts[0][1] == 1);
    CHECK(cm.counts[1][0] == 0);
    CHECK(cm.counts[1][1] == 2);
    CHECK(cm.total() == 4);
  }

  SUBCASE("empty input gives the zero matrix") {
    ConfusionMatrix cm = confusion({}, {});
    CHECK(cm.total() == 0);
  }

  SUBCASE("length and label violations raise") {
    CHECK_THROWS_AS(confusion({0, 1}, {0}), Error);
    CHECK_THROWS_AS(confusion({0, 2}, {0, 1}), Error);
    CHECK_THROWS_AS(confusion({0, 1}, {0, -1}), Error);
  }
}

TEST_CASE("metrics match the worked example and a brute-force oracle") {
  SUBCASE("the [[1,1],[0,2]] matrix") {
    ConfusionMatrix cm;
    cm.counts[0][0] = 1;
    cm.counts[0][1] = 1;
    cm.counts[1][0] = 0;
    cm.counts[1][1] = 2;
    Metrics m = compute_metrics(cm);
    CHECK(m.accuracy == doctest::Approx(75.0).epsilon(1e-9));
    CHECK(m.precision[0] == doctest::Approx(100.0).epsilon(1e-9));
    CHECK(m.recall[0] == doctest::Approx(50.0).epsilon(1e-9));
    CHECK(std::abs(m.f1[0] - 66.666666) < 1e-3);
    CHECK(std::abs(m.precision[1] - 66.666666) < 1e-3);
    CHECK(m.recall[1] == doctest::Approx(100.0).epsilon(1e-9));
    CHECK(m.f1[1] == doctest::Approx(80.0).epsilon(1e-9));
    CHECK(std::abs(m.macro_f1 - 73.333333) < 1e-3);
    CHECK_FALSE(m.degenerate);
  }

  SUBCASE("perfect predictions") {
    Metrics m = compute_metrics(confusion({0, 1, 0, 1}, {0, 1, 0, 1}));
    CHECK(m.accuracy == 100.0);
    CHECK(m.macro_f1 == 100.0);
    CHECK_FALSE(m.degenerate);
  }

  SUBCASE("all-NOT predictions flag the undefined OFF precision") {
    Metrics m = compute_metrics(confusion({0, 0, 1, 1}, {0, 0, 0, 0}));
    CHECK(m.degenerate);
    CHECK(m.precision[1] == 0.0);
    CHECK(m.recall[1] == 0.0);
    CHECK(m.f1[1] == 0.0);
    CHECK(m.accuracy == 50.0);
  }

  SUBCASE("random label sets agree with per-pair recounting") {
    RngStream rng(314);
    for (int trial = 0; trial < 40; ++trial) {
      std::vector<int> gold, pred;
      const int n = 20 + static_cast<int>(rng.next_below(180));
      const bool degenerate_preds = trial % 5 == 0;  // sometimes collapse predictions
      for (int i = 0; i < n; ++i) {
        gold.push_back(static_cast<int>(rng.next_below(2)));
        pred.push_back(degenerate_preds ? 0 : static_cast<int>(rng.next_below(2)));
      }
      Metrics m = compute_metrics(confusion(gold, pred));

      // Independent recount straight from the pairs.
      long long correct = 0;
      for (int i = 0; i < n; ++i)
        if (gold[i] == pred[i]) correct += 1;
      CHECK(m.accuracy == doctest::Approx(100.0 * correct / n).epsilon(1e-12));
      double f1_sum = 0.0;
      for (int c = 0; c < 2; ++c) {
        long long tp = 0, pred_c = 0, gold_c = 0;
        for (int i = 0; i < n; ++i) {
          if (pred[i] == c) pred_c += 1;
          if (gold[i] == c) gold_c += 1;
          if (gold[i] == c && pred[i] == c) tp += 1;
        }
        const double p = pred_c ? 100.0 * tp / pred_c : 0.0;
        const double r = gold_c ? 100.0 * tp / gold_c : 0.0;
        CHECK(m.precision[c] == doctest::Approx(p).epsilon(1e-12));
        CHECK(m.recall[c] == doctest::Approx(r).epsilon(1e-12));
        const double f1 = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
        CHECK(m.f1[c] == doctest::Approx(f1).epsilon(1e-12));
        f1_sum += f1;
      }
      CHECK(m.macro_f1 == doctest::Approx(f1_sum / 2.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("accuracy and macro-F1 rank skewed predictors differently") {
  // 90/10 class skew. The lazy predictor never says OFF; the balanced one
  // trades a little accuracy for far better OFF coverage.
  std::vector<int> gold(100, 0);
  for (int i = 90; i < 100; ++i) gold[i] = 1;
  std::vector<int> lazy(100, 0);
  std::vector<int> balanced(100, 0);
  for (int i = 0; i < 10; ++i) balanced[i] = 1;   // ten false OFF
  for (int i = 90; i < 99; ++i) balanced[i] = 1;  // nine of ten true OFF
  Metrics m_lazy = compute_metrics(confusion(gold, lazy));
  Metrics m_bal = compute_metrics(confusion(gold, balanced));
  CHECK(m_lazy.accuracy > m_bal.accuracy);
  CHECK(m_bal.macro_f1 > m_lazy.macro_f1);
  CHECK(m_lazy.accuracy == 90.0);
  CHECK(m_bal.accuracy == 89.0);
  CHECK(m_lazy.degenerate);  // OFF precision is 0/0
  CHECK(m_lazy.macro_f1 < 50.0);
  CHECK(m_bal.macro_f1 > 70.0);
}

namespace {

std::pair<Model<float>, Vocabulary> tiny_mlm_model(int vocab_size) {
  std::vector<std::string> texts;
  char buf[64];
  for (int i = 0; i < vocab_size; ++i) {
    std::snprintf(buf, sizeof buf, "tok%d", i);
    texts.push_back(buf);
  }
  Vocabulary vocab = build_vocab(texts, static_cast<std::size_t>(vocab_size) + 5, 1);
  EncoderConfig cfg = EncoderConfig::for_variant(Variant::B);
  cfg.hidden = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.ffn = 16;
  cfg.max_positions = 16;
  cfg.vocab = static_cast<int>(vocab.size());
  return {init_model<float>(cfg, RngStream(1).fork("ppl"), HeadKind::Mlm), vocab};
}

}  // namespace

TEST_CASE("perplexity") {
  SUBCASE("uniform logits over V tokens score exactly V") {
    auto [model, vocab] = tiny_mlm_model(95);
    REQUIRE(vocab.size() == 100);
    // Zero projection + zero bias -> identical logits for every token.
    std::fill(model.head_w.mutable_values().begin(), model.head_w.mutable_values().end(), 0.0f);
    std::fill(model.head_b.mutable_values().begin(), model.head_b.mutable_values().end(), 0.0f);
    std::vector<LabeledExample> rows;
    for (int i = 0; i < 20; ++i)
      rows.push_back({"p:" + std::to_string(i),
                      "tok1 tok2 tok3 tok4 tok5 tok6 tok7 tok8 tok9 tok10",
                      TargetKind::None, 0.0});
    auto encoded = encode_examples(rows, vocab, 16);
    const double ppl = perplexity(model, encoded, RngStream(5), 0.15);
    CHECK(std::abs(ppl - 100.0) < 1e-6);
  }

  SUBCASE("matches an independent full-vocabulary recount") {
    auto [model, vocab] = tiny_mlm_model(40);
    std::vector<LabeledExample> rows;
    for (int i = 0; i < 12; ++i)
      rows.push_back({"q:" + std::to_string(i), "tok1 tok2 tok3 tok4 tok5 tok6 tok7 tok8",
                      TargetKind::None, 0.0});
    auto encoded = encode_examples(rows, vocab, 16);
    RngStream base(9);
    const double ppl = perplexity(model, encoded, base, 0.3);

    double ce_sum = 0.0;
    long long count = 0;
    for (const auto& ex : encoded) {
      MaskedExample masked =
          mask_tokens(ex.seq, 0.3, MaskingPolicy::Static, ex.id, 0, base, model.config.vocab);
      if (masked.selected == 0) continue;
      RngStream unused(0);
      Tensor<float> hidden = encode_prefix(model, masked.seq, Mode::Eval, unused);
      Tensor<float> logits = mlm_logits(model, hidden);  // all rows this time
      for (int i = 0; i < masked.seq.real_length(); ++i) {
        if (masked.targets[static_cast<std::size_t>(i)] < 0) continue;
        double mx = -1e300, sum = 0.0;
        for (int jv = 0; jv < logits.dim(1); ++jv)
          mx = std::max(mx, static_cast<double>(logits.at(i, jv)));
        for (int jv = 0; jv < logits.dim(1); ++jv)
          sum += std::exp(static_cast<double>(logits.at(i, jv)) - mx);
        ce_sum += mx + std::log(sum) -
                  static_cast<double>(logits.at(i, masked.targets[static_cast<std::size_t>(i)]));
        count += 1;
      }
    }
    REQUIRE(count > 0);
    CHECK(std::abs(ppl - std::exp(ce_sum / static_cast<double>(count))) < 1e-9);
  }

  SUBCASE("no masked positions is a contract violation") {
    auto [model, vocab] = tiny_mlm_model(40);
    std::vector<LabeledExample> rows{{"r:0", "tok1 tok2", TargetKind::None, 0.0}};
    auto encoded = encode_examples(rows, vocab, 16);
    CHECK_THROWS_WITH_AS(perplexity(model, encoded, RngStream(5), 0.0),
                         doctest::Contains("no masked positions"), Error);
  }

  SUBCASE("wrong head kind is rejected") {
    auto [model, vocab] = tiny_mlm_model(40);
    Model<float> cls = swap_head(model, HeadKind::Classification, RngStream(2));
    std::vector<LabeledExample> rows{{"r:0", "tok1 tok2", TargetKind::None, 0.0}};
    auto encoded = encode_examples(rows, vocab, 16);
    CHECK_THROWS_AS(perplexity(cls, encoded, RngStream(5), 0.15), Error);
  }
}

TEST_CASE("report rendering is fixed-width and stable") {
  ReportRow a;
  a.name = "A-FT";
  a.acc_dev = 97.2221;
  a.test.accuracy = 95.0;
  a.test.macro_precision = 94.1178;
  a.test.macro_recall = 93.75;
  a.test.macro_f1 = 93.9314;
  a.epochs = 3;
  ReportRow e;
  e.name = "E_2";
  e.acc_dev = 100.0;
  e.test.accuracy = 96.5;
  e.test.macro_precision = 96.0;
  e.test.macro_recall = 95.5;
  e.test.macro_f1 = 95.7489;
  e.epochs = 10;

  const std::string table = render_report({a, e});
  CHECK(table ==
        "Model        |ACC_DEV|ACC_TST|  P_TST|  R_TST| F1_TST|Epochs\n"
        "-------------+-------+-------+-------+-------+-------+------\n"
        "A-FT         | 97.222| 95.000| 94.118| 93.750| 93.931|     3\n"
        "E_2          |100.000| 96.500| 96.000| 95.500| 95.749|    10\n");

  SUBCASE("confusion block") {
    ConfusionMatrix cm = confusion({0, 0, 1, 1}, {0, 1, 1, 1});
    CHECK(render_confusion(cm) ==
          "          pred:NOT  pred:OFF\n"
          "gold:NOT         1         1\n"
          "gold:OFF         0         2\n");
  }

  SUBCASE("misclassified listing caps at twenty rows") {
    std::vector<Misclassified> rows;
    for (int i = 0; i < 25; ++i)
      rows.push_back({"id" + std::to_string(i), "text " + std::to_string(i), 1, 0});
    const std::string listing = render_misclassified(rows);
    CHECK(listing.find("misclassified: 25") == 0);
    CHECK(listing.find("id19") != std::string::npos);
    CHECK(listing.find("id20") == std::string::npos);
    CHECK(listing.find("... 5 more not shown") != std::string::npos);
    CHECK(render_misclassified({}).find("misclassified: 0") == 0);
  }

  SUBCASE("metrics export") {
    const std::string tsv = metrics_tsv({a});
    std::istringstream in(tsv);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    REQUIRE(lines.size() == 5);
    CHECK(lines[0] == "A-FT\tacc_dev\t97.222100");
    CHECK(lines[1] == "A-FT\tacc_test\t95.000000");
    CHECK(lines[4] == "A-FT\tf1_test\t93.931400");
  }
}
