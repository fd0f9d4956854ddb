"""N-best rescoring, confusion-network combination and the toy pipeline."""

from ._rescomb import (
    ConfigError,
    DataError,
    Error,
    LstmModel,
    NGramModel,
    __version__,
    align,
    build_cn,
    cn_to_nbest,
    consensus,
    frame_combine,
    make_toy,
    nbest_posteriors,
    normalize,
    optimize_weights,
    perplexity,
    run_pipeline,
    stabilizer_scale,
    wer,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Error",
    "LstmModel",
    "NGramModel",
    "__version__",
    "align",
    "build_cn",
    "cn_to_nbest",
    "consensus",
    "frame_combine",
    "make_toy",
    "nbest_posteriors",
    "normalize",
    "optimize_weights",
    "perplexity",
    "run_pipeline",
    "stabilizer_scale",
    "wer",
]
