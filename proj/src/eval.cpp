#include "olens/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace olens {

ConfusionMatrix confusion(const std::vector<int>& gold, const std::vector<int>& pred) {
  if (gold.size() != pred.size())
    raise(ErrorKind::Value, "confusion: " + std::to_string(gold.size()) + " gold labels vs " +
                                std::to_string(pred.size()) + " predictions");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] < 0 || gold[i] > 1 || pred[i] < 0 || pred[i] > 1)
      raise(ErrorKind::Value, "confusion: label outside {0,1} at row " + std::to_string(i));
    cm.counts[gold[i]][pred[i]] += 1;
  }
  return cm;
}

namespace {

double ratio_pct(long long num, long long den, bool& degenerate) {
  if (den == 0) {
    if (num != 0) raise(ErrorKind::Contract, "metrics: impossible ratio");
    degenerate = true;
    return 0.0;
  }
  return 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

Metrics compute_metrics(const ConfusionMatrix& cm) {
  Metrics m;
  const long long total = cm.total();
  m.accuracy = ratio_pct(cm.counts[0][0] + cm.counts[1][1], total, m.degenerate);
  for (int c = 0; c < 2; ++c) {
    const long long tp = cm.counts[c][c];
    const long long pred_c = cm.counts[0][c] + cm.counts[1][c];
    const long long gold_c = cm.counts[c][0] + cm.counts[c][1];
    m.precision[c] = ratio_pct(tp, pred_c, m.degenerate);
    m.recall[c] = ratio_pct(tp, gold_c, m.degenerate);
    const double pr = m.precision[c] + m.recall[c];
    if (pr == 0.0) {
      m.degenerate = true;
      m.f1[c] = 0.0;
    } else {
      m.f1[c] = 2.0 * m.precision[c] * m.recall[c] / pr;
    }
  }
  m.macro_precision = (m.precision[0] + m.precision[1]) / 2.0;
  m.macro_recall = (m.recall[0] + m.recall[1]) / 2.0;
  m.macro_f1 = (m.f1[0] + m.f1[1]) / 2.0;
  return m;
}

double perplexity(const Model<float>& model, const std::vector<EncodedExample>& examples,
                  const RngStream& mask_rng, double mask_rate) {
  require_head(model, HeadKind::Mlm, "perplexity");
  double ce_sum = 0.0;
  long long ce_count = 0;
  for (const auto& ex : examples) {
    MaskedExample masked = mask_tokens(ex.seq, mask_rate, MaskingPolicy::Static, ex.id,
                                       /*epoch=*/0, mask_rng, model.config.vocab);
    if (masked.selected == 0) continue;
    Tensor<float> hidden = encode_prefix(model, masked.seq, Mode::Eval, mask_rng);
    std::vector<int> positions;
    std::vector<int> targets;
    for (int i = 0; i < masked.seq.real_length(); ++i) {
      if (masked.targets[static_cast<std::size_t>(i)] >= 0) {
        positions.push_back(i);
        targets.push_back(masked.targets[static_cast<std::size_t>(i)]);
      }
    }
    Tensor<float> logits = mlm_logits_at(model, hidden, positions);
    const int v = logits.dim(1);
    auto vals = logits.values();
    for (std::size_t r = 0; r < positions.size(); ++r) {
      const float* rowv = vals.data() + r * static_cast<std::size_t>(v);
      double mx = rowv[0];
      for (int j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(rowv[j]));
      double sum = 0.0;
      for (int j = 0; j < v; ++j) sum += std::exp(static_cast<double>(rowv[j]) - mx);
      const double lse = mx + std::log(sum);
      ce_sum += lse - static_cast<double>(rowv[targets[r]]);
      ce_count += 1;
    }
  }
  if (ce_count == 0)
    raise(ErrorKind::Contract, "perplexity: no masked positions in the corpus");
  return std::exp(ce_sum / static_cast<double>(ce_count));
}

namespace {

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%7.3f", v);
  return buf;
}

}  // namespace

std::string render_report(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  out << "Model        |ACC_DEV|ACC_TST|  P_TST|  R_TST| F1_TST|Epochs\n";
  out << "-------------+-------+-------+-------+-------+-------+------\n";
  for (const auto& r : rows) {
    char name[32];
    std::snprintf(name, sizeof name, "%-13s", r.name.c_str());
    char ep[16];
    std::snprintf(ep, sizeof ep, "%6d", r.epochs);
    out << name << '|' << fmt3(r.acc_dev) << '|' << fmt3(r.test.accuracy) << '|'
        << fmt3(r.test.macro_precision) << '|' << fmt3(r.test.macro_recall) << '|'
        << fmt3(r.test.macro_f1) << '|' << ep << '\n';
  }
  return out.str();
}

std::string render_confusion(const ConfusionMatrix& cm) {
  std::ostringstream out;
  out << "          pred:NOT  pred:OFF\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "gold:NOT %9lld %9lld\n", cm.counts[0][0], cm.counts[0][1]);
  out << buf;
  std::snprintf(buf, sizeof buf, "gold:OFF %9lld %9lld\n", cm.counts[1][0], cm.counts[1][1]);
  out << buf;
  return out.str();
}

std::string render_misclassified(const std::vector<Misclassified>& rows, std::size_t cap) {
  std::ostringstream out;
  out << "misclassified: " << rows.size() << '\n';
  const std::size_t shown = std::min(rows.size(), cap);
  for (std::size_t i = 0; i < shown; ++i) {
    const auto& r = rows[i];
    out << "  " << r.id << "  gold=" << label_name(r.gold) << " pred=" << label_name(r.pred)
        << "  " << r.text << '\n';
  }
  if (rows.size() > cap)
    out << "  ... " << (rows.size() - cap) << " more not shown\n";
  return out.str();
}

std::string metrics_tsv(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  char buf[64];
  auto emit = [&](const std::string& model, const char* metric, double v) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    out << model << '\t' << metric << '\t' << buf << '\n';
  };
  for (const auto& r : rows) {
    emit(r.name, "acc_dev", r.acc_dev);
    emit(r.name, "acc_test", r.test.accuracy);
    emit(r.name, "precision_test", r.test.macro_precision);
    emit(r.name, "recall_test", r.test.macro_recall);
    emit(r.name, "f1_test", r.test.macro_f1);
  }
  return out.str();
}

}  // namespace olens
