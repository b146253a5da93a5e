"""Offensive-language identification pipeline (C++ core).

The heavy lifting lives in the compiled extension ``olens._core``: a word-level
tokenizer, transformer encoders trained in stages, ensembling over concatenated
sentence representations, and the evaluation stack. ``run()`` drives the same
command surface as the ``olens`` binary, in-process.
"""

from olens._core import (
    NOT,
    OFF,
    EncodedSequence,
    Error,
    Vocabulary,
    __version__,
    build_vocab,
    decode,
    encode,
    ensemble_predict,
    load_vocab,
    metrics,
    perplexity,
    predict_labels,
    run,
    save_vocab,
    slice_counts,
    threshold_label,
    tokenize,
)

__all__ = [
    "NOT",
    "OFF",
    "EncodedSequence",
    "Error",
    "Vocabulary",
    "__version__",
    "build_vocab",
    "decode",
    "encode",
    "ensemble_predict",
    "load_vocab",
    "metrics",
    "perplexity",
    "predict_labels",
    "run",
    "save_vocab",
    "slice_counts",
    "threshold_label",
    "tokenize",
]
