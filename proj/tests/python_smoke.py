"""End-to-end smoke test of the Python bindings.

Covers the tokenizer/vocabulary surface, split arithmetic, metrics, the
in-process command runner, and checkpoint inference (single model, masked-LM
perplexity, ensemble).
"""

import os
import shutil
import tempfile

import olens


def check_pure_surface():
    assert olens.tokenize("The cat sat!") == ["the", "cat", "sat"]

    vocab = olens.build_vocab(["The cat sat on the mat", "a dog ran"], max_size=50)
    assert len(vocab) > 5
    assert "cat" in vocab and "zebra" not in vocab
    assert vocab.token_of(vocab.id_of("cat")) == "cat"

    seq = olens.encode("the cat sat", vocab, max_length=8)
    assert len(seq) == 8
    assert seq.real_length() == 5  # CLS + 3 tokens + SEP
    assert seq.attention_mask[:5] == [1, 1, 1, 1, 1]
    assert seq.segment_ids == [0] * 8
    assert olens.decode(seq.ids, vocab) == "the cat sat"

    assert olens.slice_counts(13240, 0.1) == (11916, 1324)
    assert olens.slice_counts(8996730, 0.005) == (8951747, 44983)

    assert olens.threshold_label(0.215) == olens.NOT
    assert olens.threshold_label(0.691) == olens.OFF
    assert olens.threshold_label(0.5) == olens.NOT

    m = olens.metrics([0, 0, 1, 1], [0, 1, 1, 1])
    assert m["confusion"] == ((1, 1), (0, 2))
    assert m["accuracy"] == 75.0
    assert abs(m["macro_f1"] - 73.333) < 1e-2
    assert not m["degenerate"]

    try:
        olens.build_vocab([], 10)
    except olens.Error:
        pass
    else:
        raise AssertionError("empty corpus must raise olens.Error")

    assert olens.run(["predict"]) == 2  # missing required options -> usage error


def check_trained_artifacts(root):
    data = os.path.join(root, "data")
    assert olens.run(["prepare-data", "--synthetic", "160", "--seed", "7",
                      "--out", data]) == 0
    assert os.path.exists(os.path.join(data, "vocab.tsv"))
    assert os.path.exists(os.path.join(data, "dedup.tsv"))

    runs = os.path.join(root, "runs")
    vocab_path = os.path.join(runs, "vocab.tsv")
    common = [
        "--synthetic", "160", "--seed", "7", "--max-length", "24",
        "--epochs", "1", "--lr-scale", "50",
        "--manifest", os.path.join(runs, "manifest.tsv"),
    ]
    stage_flags = common + [
        "--hidden", "16", "--layers", "1", "--heads", "2", "--ffn", "32",
        "--solid-dev-fraction", "0.1",
    ]
    ft_dir = os.path.join(runs, "A-FT")
    assert olens.run(["finetune", "--stage", "FT", "--variant", "A",
                      "--save-vocab", vocab_path, "--out", ft_dir] + stage_flags) == 0
    gen_dir = os.path.join(runs, "A-GEN")
    assert olens.run(["pretrain", "--stage", "GEN", "--variant", "A",
                      "--out", gen_dir] + stage_flags) == 0

    texts = ["the crew stayed calm", "a loud dingus ruined the show"]
    labels = olens.predict_labels(ft_dir, vocab_path, texts)
    assert len(labels) == len(texts)
    assert all(label in (olens.NOT, olens.OFF) for label in labels)

    ppl = olens.perplexity(gen_dir, vocab_path, texts)
    vocab = olens.load_vocab(vocab_path)
    assert 1.0 < ppl < len(vocab)

    ens_dir = os.path.join(runs, "E")
    assert olens.run(["ensemble-train", "--member", "one=" + ft_dir,
                      "--member", "two=" + gen_dir, "--out", ens_dir] + common) == 0
    ens_labels = olens.ensemble_predict(ens_dir, vocab_path, texts)
    assert len(ens_labels) == len(texts)
    assert all(label in (olens.NOT, olens.OFF) for label in ens_labels)

    try:
        olens.predict_labels(gen_dir, vocab_path, texts)
    except olens.Error:
        pass  # masked-LM head cannot classify
    else:
        raise AssertionError("prediction from a masked-LM head must raise")


def main():
    check_pure_surface()
    root = tempfile.mkdtemp(prefix="olens_smoke_")
    try:
        check_trained_artifacts(root)
    finally:
        shutil.rmtree(root, ignore_errors=True)
    print("python smoke: ok")


if __name__ == "__main__":
    main()
