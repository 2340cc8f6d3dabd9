"""Sparse attention under Gaussian inputs: closed-form sparsity bounds, an
LSH-blocked kernel with tail-mass scale correction, and Monte Carlo checks."""

from .errors import (ConfigError, DegenerateRow, DomainError, FormatError,
                     ShapeMismatch, SparseAttnError)
from .io import read_matrix, write_csv, write_matrix
from .lsh import (LshHasher, Permutation, apply_permutation, build_hasher, hash_vector,
                  invert_permutation, sort_permutation)
from .sparse import (BlockPlan, ErrorReport, IdealSparseResult, blocked_attention,
                     error_report, ideal_sparse_attention, sparse_attention)
from .tensor import (LayerNormParams, RngSpec, exact_attention, is_eps_k_sparse, layer_norm,
                     sample_gaussian_matrix, softmax)
from .theory import (SparsityEstimate, SparsityProfile, compute_profile, effective_weight,
                     eps_b, erf_inv, estimate_eps, p_of, p_sparse_lower_bound)

__version__ = "0.1.0"
