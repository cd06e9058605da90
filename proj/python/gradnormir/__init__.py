"""Query-free out-of-distribution corpus detection for dense retrievers."""

from ._gradnormir import (
    CosineIndex,
    GradNormIRError,
    __version__,
    config_digest,
    corpus_report,
    grad_norm,
    infonce_loss,
    load_embeddings,
    recall_at_k,
    score_corpus,
    select_retriever,
    threshold,
    write_embeddings,
)

__all__ = [
    "CosineIndex",
    "GradNormIRError",
    "__version__",
    "config_digest",
    "corpus_report",
    "grad_norm",
    "infonce_loss",
    "load_embeddings",
    "recall_at_k",
    "score_corpus",
    "select_retriever",
    "threshold",
    "write_embeddings",
]
