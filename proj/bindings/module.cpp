// Python bindings: tokenizer/vocabulary, split arithmetic, metrics, checkpoint
// inference, and the full command surface via run().

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "olens/checkpoint.hpp"
#include "olens/cli.hpp"
#include "olens/ensemble.hpp"
#include "olens/eval.hpp"
#include "olens/training.hpp"

namespace py = pybind11;
using namespace olens;

namespace {

std::vector<EncodedExample> encode_texts(const std::vector<std::string>& texts,
                                         const Vocabulary& vocab, int max_length) {
  std::vector<LabeledExample> rows;
  rows.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i)
    rows.push_back({std::to_string(i), texts[i], TargetKind::None, 0.0});
  return encode_examples(rows, vocab, max_length);
}

void check_vocab_size(int expected, const Vocabulary& vocab, const char* what) {
  if (expected != vocab.size())
    raise(ErrorKind::Config, "vocabulary has " + std::to_string(vocab.size()) +
                                 " tokens but the " + std::string(what) + " expects " +
                                 std::to_string(expected));
}

py::dict metrics_dict(const std::vector<int>& gold, const std::vector<int>& pred) {
  const ConfusionMatrix cm = confusion(gold, pred);
  const Metrics mt = compute_metrics(cm);
  py::dict d;
  d["confusion"] = py::make_tuple(py::make_tuple(cm.counts[0][0], cm.counts[0][1]),
                                  py::make_tuple(cm.counts[1][0], cm.counts[1][1]));
  d["accuracy"] = mt.accuracy;
  d["precision"] = py::make_tuple(mt.precision[0], mt.precision[1]);
  d["recall"] = py::make_tuple(mt.recall[0], mt.recall[1]);
  d["f1"] = py::make_tuple(mt.f1[0], mt.f1[1]);
  d["macro_precision"] = mt.macro_precision;
  d["macro_recall"] = mt.macro_recall;
  d["macro_f1"] = mt.macro_f1;
  d["degenerate"] = mt.degenerate;
  return d;
}

int run_args(const std::vector<std::string>& args) {
  std::vector<std::string> full{"olens"};
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  argv.reserve(full.size());
  for (const auto& a : full) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::vector<int> predict_texts(const std::string& checkpoint_dir, const std::string& vocab_path,
                               const std::vector<std::string>& texts) {
  const Vocabulary vocab = load_vocab(vocab_path);
  const Model<float> model = load_checkpoint(checkpoint_dir);
  if (model.head != HeadKind::Classification)
    raise(ErrorKind::Usage, "checkpoint '" + checkpoint_dir + "' has a " +
                                to_string(model.head) +
                                " head; prediction needs a classification head");
  check_vocab_size(model.config.vocab, vocab, "model");
  return predict_labels(model, encode_texts(texts, vocab, model.config.max_positions));
}

std::vector<int> ensemble_predict_texts(const std::string& ensemble_dir,
                                        const std::string& vocab_path,
                                        const std::vector<std::string>& texts,
                                        const std::string& members_root) {
  const Vocabulary vocab = load_vocab(vocab_path);
  const EnsembleModel ens = load_ensemble(ensemble_dir, members_root);
  if (ens.members.empty())
    raise(ErrorKind::Config, "ensemble '" + ensemble_dir + "' has no members");
  const auto& cfg = ens.members.front().model.config;
  check_vocab_size(cfg.vocab, vocab, "ensemble");
  return ensemble_predict(ens, encode_texts(texts, vocab, cfg.max_positions));
}

double perplexity_of(const std::string& checkpoint_dir, const std::string& vocab_path,
                     const std::vector<std::string>& texts, double mask_rate) {
  const Vocabulary vocab = load_vocab(vocab_path);
  const Model<float> model = load_checkpoint(checkpoint_dir);
  if (model.head != HeadKind::Mlm)
    raise(ErrorKind::Usage, "checkpoint '" + checkpoint_dir + "' has a " +
                                to_string(model.head) +
                                " head; perplexity needs a masked-LM head");
  check_vocab_size(model.config.vocab, vocab, "model");
  return perplexity(model, encode_texts(texts, vocab, model.config.max_positions),
                    RngStream(7), mask_rate);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() =
      "Offensive-language identification pipeline: word-level tokenizer, "
      "transformer encoders trained in stages, ensembling, and evaluation. "
      "run() executes any command of the `olens` binary in-process.";

  py::register_exception<Error>(m, "Error");

  py::class_<Vocabulary>(m, "Vocabulary",
                         "Word-level vocabulary with PAD/UNK/CLS/SEP/MASK at ids 0-4.")
      .def("__len__", &Vocabulary::size)
      .def(
          "id_of", [](const Vocabulary& v, const std::string& t) { return v.id_of(t); },
          py::arg("token"), "Id of a token; unknown tokens map to UNK.")
      .def(
          "token_of", [](const Vocabulary& v, int id) { return v.token_of(id); },
          py::arg("id"))
      .def("__contains__",
           [](const Vocabulary& v, const std::string& t) { return v.contains(t); });

  py::class_<EncodedSequence>(m, "EncodedSequence",
                              "CLS + token ids + SEP, PAD-filled to a fixed length.")
      .def_readonly("ids", &EncodedSequence::ids)
      .def_readonly("attention_mask", &EncodedSequence::attention_mask)
      .def_readonly("segment_ids", &EncodedSequence::segment_ids)
      .def("__len__", &EncodedSequence::length)
      .def("real_length", &EncodedSequence::real_length,
           "Number of non-PAD positions, specials included.");

  m.def("run", &run_args, py::arg("args"),
        "Run one command (same arguments as the `olens` binary, without the program "
        "name). Returns the exit code: 0 success, 1 runtime failure, 2 usage error.");

  m.def(
      "tokenize", [](const std::string& text) { return tokenize(text); }, py::arg("text"),
      "Lowercased split on any non-alphanumeric byte.");
  m.def("build_vocab", &build_vocab, py::arg("corpus"), py::arg("max_size") = 2000,
        py::arg("min_freq") = 1,
        "Most frequent tokens up to max_size (specials included), ties lexicographic.");
  m.def("load_vocab", &load_vocab, py::arg("path"));
  m.def("save_vocab", &save_vocab, py::arg("path"), py::arg("vocab"));
  m.def(
      "encode",
      [](const std::string& text, const Vocabulary& v, int max_length) {
        return encode(text, v, max_length);
      },
      py::arg("text"), py::arg("vocab"), py::arg("max_length") = 128);
  m.def("decode", &decode, py::arg("ids"), py::arg("vocab"),
        "Space-joined tokens, special ids omitted.");

  m.def("slice_counts", &slice_counts, py::arg("n"), py::arg("dev_fraction"),
        "(train, dev) with dev = floor(dev_fraction * n).");
  m.def(
      "threshold_label",
      [](double average_confidence, double threshold) {
        RawTweet t;
        t.avg_conf = average_confidence;
        return threshold_label(t, threshold);
      },
      py::arg("average_confidence"), py::arg("threshold") = 0.5,
      "1 (OFF) iff the confidence is strictly above the threshold, else 0 (NOT).");

  m.def("metrics", &metrics_dict, py::arg("gold"), py::arg("pred"),
        "Confusion counts plus accuracy / per-class and macro precision, recall, F1 "
        "(percent). 0/0 ratios become 0 and set `degenerate`.");

  m.def("predict_labels", &predict_texts, py::arg("checkpoint_dir"), py::arg("vocab_path"),
        py::arg("texts"), "Labels (0 NOT / 1 OFF) from a classification checkpoint.");
  m.def("ensemble_predict", &ensemble_predict_texts, py::arg("ensemble_dir"),
        py::arg("vocab_path"), py::arg("texts"), py::arg("members_root") = std::string(),
        "Labels from a saved ensemble; members_root resolves external member references.");
  m.def("perplexity", &perplexity_of, py::arg("checkpoint_dir"), py::arg("vocab_path"),
        py::arg("texts"), py::arg("mask_rate") = 0.15,
        "Masked-LM perplexity of a checkpoint over the given texts (fixed mask stream).");

  m.attr("NOT") = kNot;
  m.attr("OFF") = kOff;
  m.attr("__version__") = "0.1.0";
}
