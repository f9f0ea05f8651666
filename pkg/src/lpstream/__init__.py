"""One-pass lp summaries: well-conditioned bases, leverage-based row retention,
merge-and-reduce subspace embeddings, regression, l1 low-rank approximation and
thresholded matrix products."""

from .amm import amm_rowwise, amm_streaming_columns, sketch_inner_product, threshold_vector
from .conditioning import (RankDeficiencyError, WcbCertificate, WcbFactorization, wcb, wcb_check,
                           wcb_orth, wcb_rounding, wcb_spc3)
from .embedding import TreeConfig, subspace_embed, tree_simulate
from .leverage import leverage_report, leverage_scores, stream_high_leverage
from .lowrank import l1_decompose_wcb, l1_lowrank_tree, l1_rank_k_inner
from .matcore import InputError, PNorm, RowBlockStream, block_iter, load_matrix
from .regression import (RegressionInstance, linf_additive_stream, regress_via_embedding,
                         solve_lp_regression)

__version__ = "0.1.0"

__all__ = [
    "InputError", "PNorm", "RankDeficiencyError", "RegressionInstance", "RowBlockStream",
    "TreeConfig", "WcbCertificate", "WcbFactorization", "amm_rowwise", "amm_streaming_columns",
    "block_iter", "l1_decompose_wcb", "l1_lowrank_tree", "l1_rank_k_inner", "leverage_report", "leverage_scores",
    "linf_additive_stream", "load_matrix", "regress_via_embedding", "sketch_inner_product",
    "solve_lp_regression", "stream_high_leverage", "subspace_embed", "threshold_vector",
    "tree_simulate", "wcb", "wcb_check", "wcb_orth", "wcb_rounding", "wcb_spc3",
]
