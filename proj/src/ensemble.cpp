#include "olens/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "olens/checkpoint.hpp"
#include "olens/hash.hpp"

namespace fs = std::filesystem;

namespace olens {

int EnsembleModel::concat_dim() const {
  int d = 0;
  for (const auto& m : members) d += m.model.config.hidden;
  return d;
}

namespace {

Tensor<float> copy_tensor(const Tensor<float>& t) {
  return Tensor<float>::from(t.shape(),
                             std::vector<float>(t.values().begin(), t.values().end()));
}

}  // namespace

EnsembleModel EnsembleModel::clone() const {
  EnsembleModel out;
  out.dropout = dropout;
  out.freeze_members = freeze_members;
  out.decoder_w = copy_tensor(decoder_w);
  out.decoder_b = copy_tensor(decoder_b);
  for (const auto& m : members)
    out.members.push_back({m.name, m.source_dir, m.hash, m.model.clone()});
  return out;
}

EnsembleModel make_ensemble(std::vector<EnsembleMember> members, double dropout,
                            bool freeze_members, const RngStream& rng, bool allow_any_count) {
  if (members.empty()) raise(ErrorKind::Value, "ensemble: no members");
  if (!allow_any_count && static_cast<int>(members.size()) != kEnsembleMemberCount)
    raise(ErrorKind::Config, "ensemble: expected " + std::to_string(kEnsembleMemberCount) +
                                 " members, got " + std::to_string(members.size()) +
                                 " (pass an explicit member list to override)");
  if (!(dropout >= 0.0 && dropout < 1.0))
    raise(ErrorKind::Value, "ensemble: dropout outside [0, 1)");
  std::set<std::string> names;
  for (const auto& m : members) {
    if (m.name.empty()) raise(ErrorKind::Value, "ensemble: member with empty name");
    if (!names.insert(m.name).second)
      raise(ErrorKind::Value, "ensemble: duplicate member name " + m.name);
    if (m.model.config.vocab != members[0].model.config.vocab ||
        m.model.config.max_positions != members[0].model.config.max_positions)
      raise(ErrorKind::Config,
            "ensemble: member " + m.name + " disagrees on vocabulary or sequence length");
  }
  EnsembleModel ens;
  ens.members = std::move(members);
  ens.dropout = dropout;
  ens.freeze_members = freeze_members;
  ens.decoder_w = detail::init_weight<float>({ens.concat_dim(), 2}, rng, "ensemble.decoder_w");
  ens.decoder_b = detail::init_const<float>({2}, 0.0f);
  return ens;
}

EnsembleModel build_ensemble(const std::vector<std::pair<std::string, std::string>>& members,
                             double dropout, bool freeze_members, const RngStream& rng,
                             bool allow_any_count) {
  std::vector<EnsembleMember> loaded;
  for (const auto& [name, dir] : members)
    loaded.push_back({name, dir, checkpoint_hash(dir), load_checkpoint(dir)});
  return make_ensemble(std::move(loaded), dropout, freeze_members, rng, allow_any_count);
}

Tensor<float> ensemble_logits(const EnsembleModel& ens, const EncodedSequence& seq, Mode mode,
                              const RngStream& drop_rng) {
  std::vector<Tensor<float>> reps;
  reps.reserve(ens.members.size());
  for (std::size_t i = 0; i < ens.members.size(); ++i) {
    const Mode member_mode = ens.freeze_members ? Mode::Eval : mode;
    RngStream member_rng = drop_rng.fork("member:" + std::to_string(i));
    reps.push_back(sentence_representation(
        encode_prefix(ens.members[i].model, seq, member_mode, member_rng)));
  }
  Tensor<float> rep = reps.size() == 1 ? reps[0] : concat(reps, 0);
  RngStream decoder_rng = drop_rng.fork("decoder");
  rep = dropout(rep, ens.dropout, mode, decoder_rng);
  return affine(rep, ens.decoder_w, ens.decoder_b);
}

std::vector<int> ensemble_predict(const EnsembleModel& ens,
                                  const std::vector<EncodedExample>& examples) {
  std::vector<int> out;
  out.reserve(examples.size());
  RngStream unused(0);
  for (const auto& ex : examples)
    out.push_back(predicted_label(ensemble_logits(ens, ex.seq, Mode::Eval, unused)));
  return out;
}

double ensemble_accuracy(const EnsembleModel& ens, const std::vector<EncodedExample>& dev) {
  if (dev.empty()) raise(ErrorKind::Value, "ensemble_accuracy: no examples");
  auto pred = ensemble_predict(ens, dev);
  long long correct = 0;
  for (std::size_t i = 0; i < dev.size(); ++i) {
    int gold;
    if (dev[i].kind == TargetKind::Class) {
      gold = static_cast<int>(dev[i].target);
    } else if (dev[i].kind == TargetKind::Confidence) {
      gold = dev[i].target > 0.5 ? 1 : 0;
    } else {
      raise(ErrorKind::Contract, "ensemble_accuracy: example " + dev[i].id + " has no target");
    }
    if (pred[i] == gold) correct += 1;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(dev.size());
}

namespace {

NamedParams trainable_params(EnsembleModel& ens) {
  NamedParams params;
  params.emplace_back("decoder.w", ens.decoder_w);
  params.emplace_back("decoder.b", ens.decoder_b);
  if (!ens.freeze_members) {
    // Member heads stay out: the decoder bypasses them, so they get no
    // gradient and would only bloat the optimizer state.
    for (auto& m : ens.members)
      for (auto& [name, t] : m.model.encoder_params())
        params.emplace_back(m.name + "." + name, t);
  }
  return params;
}

void apply_grad_flags(EnsembleModel& ens) {
  ens.decoder_w.set_requires_grad(true);
  ens.decoder_b.set_requires_grad(true);
  for (auto& m : ens.members) m.model.set_requires_grad(!ens.freeze_members);
}

}  // namespace

double ensemble_epoch(EnsembleModel& ens, const std::vector<EncodedExample>& examples,
                      AdamState& opt, int epoch, int batch_size, const RngStream& run_rng,
                      const std::string& run_label) {
  if (examples.empty()) raise(ErrorKind::Value, "ensemble_epoch: no training examples");
  if (batch_size <= 0) raise(ErrorKind::Value, "ensemble_epoch: batch size must be positive");
  apply_grad_flags(ens);
  NamedParams params = trainable_params(ens);
  auto order = shuffled_indices(
      examples.size(), run_rng.fork("shuffle:" + run_label + ":" + std::to_string(epoch)));

  double loss_sum = 0.0;
  long long count = 0;
  const std::size_t bs = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t end = std::min(start + bs, order.size());
    const float inv = 1.0f / static_cast<float>(end - start);
    for (std::size_t i = start; i < end; ++i) {
      const EncodedExample& ex = examples[order[i]];
      if (ex.kind != TargetKind::Class)
        raise(ErrorKind::Contract, "ensemble_epoch: example " + ex.id + " lacks a class target");
      Tape<float> tape;
      TapeScope<float> scope(tape);
      RngStream drop = run_rng.fork("drop:" + run_label + ":" + std::to_string(epoch) + ":" +
                                    ex.id);
      Tensor<float> logits = ensemble_logits(ens, ex.seq, Mode::Train, drop);
      Tensor<float> loss =
          cross_entropy(reshape(logits, {1, 2}), {static_cast<int>(ex.target)});
      loss_sum += loss.item();
      count += 1;
      tape.backward(loss, inv);
    }
    adam_step(params, opt);
    zero_grads(params);
  }
  return loss_sum / static_cast<double>(count);
}

EnsembleResult train_ensemble(const EnsembleSpec& spec, EnsembleModel& ens,
                              const Corpora& corpora) {
  if (spec.epochs < 1) raise(ErrorKind::Value, "train_ensemble: epochs must be at least 1");
  if (spec.out_dir.empty()) raise(ErrorKind::Value, "train_ensemble: no output directory");
  ens.dropout = spec.dropout;
  ens.freeze_members = spec.freeze_members;
  for (const auto& m : ens.members) {
    if (m.model.config.vocab != static_cast<int>(corpora.vocab.size()))
      raise(ErrorKind::Config, "train_ensemble: member " + m.name + " vocabulary size " +
                                   std::to_string(m.model.config.vocab) +
                                   " != corpus vocabulary " +
                                   std::to_string(corpora.vocab.size()));
    if (m.model.config.max_positions != corpora.max_length)
      raise(ErrorKind::Config,
            "train_ensemble: member " + m.name + " sequence length differs from the corpus");
  }

  SplitPlan plan;
  plan.stage = Stage::E;
  plan.seed = spec.seed;
  plan.olid_dev_fraction = spec.olid_dev_fraction;
  SplitResult split = make_split(plan, corpora.olid_train, corpora.olid_test,
                                 corpora.solid_dedup, corpora.task_test);
  auto train = encode_examples(split.train, corpora.vocab, corpora.max_length);
  auto dev = encode_examples(split.dev, corpora.vocab, corpora.max_length);

  AdamState opt;
  opt.lr = spec.lr * spec.lr_scale;
  RngStream run(spec.seed);
  EnsembleResult res;
  res.name = spec.name;
  EnsembleModel best;
  for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
    const double loss = ensemble_epoch(ens, train, opt, epoch, spec.batch, run, spec.name);
    const double acc = ensemble_accuracy(ens, dev);
    res.train_loss_trace.push_back(loss);
    res.dev_metric_trace.push_back(acc);
    if (res.best_epoch == 0 || acc > res.best_metric) {
      best = ens.clone();
      res.best_metric = acc;
      res.best_epoch = epoch;
    }
  }
  ens = std::move(best);
  save_ensemble(spec.out_dir, ens);
  res.checkpoint_dir = spec.out_dir;
  res.checkpoint_hash = ensemble_hash(spec.out_dir);
  return res;
}

void save_ensemble(const std::string& dir, const EnsembleModel& ens) {
  if (ens.members.empty()) raise(ErrorKind::Value, "save_ensemble: no members");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) raise(ErrorKind::Io, "cannot create directory " + dir + ": " + ec.message());

  std::ostringstream tsv;
  for (std::size_t i = 0; i < ens.members.size(); ++i) {
    const auto& m = ens.members[i];
    // Frozen members that came from a checkpoint keep an external reference;
    // anything that trained (or never touched disk) is stored inside.
    const bool external = ens.freeze_members && !m.source_dir.empty();
    std::string rel, hash;
    if (external) {
      rel = fs::path(m.source_dir).filename().string();
      hash = checkpoint_hash(m.source_dir);
    } else {
      rel = "members/" + m.name;
      save_checkpoint(dir + "/" + rel, m.model);
      hash = checkpoint_hash(dir + "/" + rel);
    }
    tsv << "member\t" << i << '\t' << m.name << '\t' << (external ? "external" : "internal")
        << '\t' << rel << '\t' << hash << '\n';
  }
  tsv << "dropout\t" << format_double_roundtrip(ens.dropout) << '\n';
  tsv << "freeze_members\t" << (ens.freeze_members ? 1 : 0) << '\n';
  std::ofstream out(dir + "/ensemble.tsv", std::ios::binary);
  if (!out) raise(ErrorKind::Io, "cannot write " + dir + "/ensemble.tsv");
  out << tsv.str();
  out.close();

  save_tensors(dir, {{"decoder.w", ens.decoder_w}, {"decoder.b", ens.decoder_b}});
}

EnsembleModel load_ensemble(const std::string& dir, const std::string& root) {
  std::ifstream in(dir + "/ensemble.tsv", std::ios::binary);
  if (!in) raise(ErrorKind::Io, "cannot open " + dir + "/ensemble.tsv");
  EnsembleModel ens;
  bool saw_dropout = false, saw_freeze = false;
  struct Row {
    std::string name, location, rel, hash;
  };
  std::vector<Row> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t pos = 0;
    while (true) {
      auto tab = line.find('\t', pos);
      f.push_back(line.substr(pos, tab == std::string::npos ? tab : tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    if (f[0] == "member") {
      if (f.size() != 6)
        raise(ErrorKind::Parse, dir + "/ensemble.tsv: malformed member row " +
                                    std::to_string(lineno));
      if (f[1] != std::to_string(rows.size()))
        raise(ErrorKind::Parse, dir + "/ensemble.tsv: member rows out of order");
      if (f[3] != "internal" && f[3] != "external")
        raise(ErrorKind::Parse, dir + "/ensemble.tsv: unknown member location " + f[3]);
      rows.push_back({f[2], f[3], f[4], f[5]});
    } else if (f[0] == "dropout" && f.size() == 2) {
      try {
        ens.dropout = std::stod(f[1]);
      } catch (const std::exception&) {
        raise(ErrorKind::Parse, dir + "/ensemble.tsv: bad dropout value");
      }
      saw_dropout = true;
    } else if (f[0] == "freeze_members" && f.size() == 2) {
      ens.freeze_members = f[1] != "0";
      saw_freeze = true;
    } else {
      raise(ErrorKind::Parse, dir + "/ensemble.tsv: unknown row '" + f[0] + "'");
    }
  }
  if (rows.empty()) raise(ErrorKind::Parse, dir + "/ensemble.tsv: no member rows");
  if (!saw_dropout || !saw_freeze)
    raise(ErrorKind::Parse, dir + "/ensemble.tsv: missing dropout or freeze_members");

  const std::string base =
      root.empty() ? fs::path(dir).parent_path().string() : root;
  for (const auto& r : rows) {
    const std::string path =
        r.location == "internal" ? dir + "/" + r.rel : base + "/" + r.rel;
    const std::string actual = checkpoint_hash(path);
    if (actual != r.hash)
      raise(ErrorKind::Contract, "ensemble member " + r.name + " at " + path +
                                     " has hash " + actual + ", recorded " + r.hash);
    ens.members.push_back({r.name, path, actual, load_checkpoint(path)});
  }

  auto tensors = load_tensors(dir);
  if (tensors.size() != 2 || tensors[0].first != "decoder.w" || tensors[1].first != "decoder.b")
    raise(ErrorKind::Parse, dir + ": expected decoder.w and decoder.b tensors");
  ens.decoder_w = std::move(tensors[0].second);
  ens.decoder_b = std::move(tensors[1].second);
  if (ens.decoder_w.rank() != 2 || ens.decoder_w.dim(0) != ens.concat_dim() ||
      ens.decoder_w.dim(1) != 2 || ens.decoder_b.rank() != 1 || ens.decoder_b.dim(0) != 2)
    raise(ErrorKind::Parse, dir + ": decoder shape does not match the member stack");
  return ens;
}

std::string ensemble_hash(const std::string& dir) {
  auto read_file = [](const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) raise(ErrorKind::Io, "cannot open " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
  };
  std::uint64_t h = fnv1a(read_file(dir + "/ensemble.tsv"));
  h = fnv1a(read_file(dir + "/manifest.tsv"), h);
  h = fnv1a(read_file(dir + "/weights.bin"), h);
  return hash_hex(h);
}

}  // namespace olens
