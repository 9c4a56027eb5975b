"""kNN KL-divergence estimation and ambiguity-radius bounds.

The estimator from nearest-neighbor distance ratios between two sample sets:

    D^(p||q) = (r/N) sum_i ln(nu_i / rho_i) + log(M / (N-1))

with r the sample dimension, rho_i the distance from the i-th p-sample to its
k-th nearest neighbor among the other p-samples, and nu_i the distance to its
k-th nearest neighbor among the q-samples. Both logarithms are natural. The
raw estimate may be negative at finite sample sizes; the bound-reporting
layers floor it at zero (an ambiguity radius cannot be negative) while the
estimator itself stays faithful.

For state-dependent noise the global bound stacks n+1 consecutive noise draws
into joint vectors per receding-horizon window, fits a zero-mean diagonal
joint reference by MLE, and takes the maximum of the per-window estimates.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DegenerateDistanceWarning, WindowTooLarge
from .noise_learning import GaussianRef, TrainingSet

DISTANCE_FLOOR = 1e-12
_CHUNK = 1024


@dataclass(frozen=True)
class KnnConfig:
    """Neighbor order k and reference sample count M (Euclidean metric)."""

    k: int = 10
    ref_samples: int = 100

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.ref_samples <= self.k:
            raise ValueError("ref_samples must exceed k")


def _kth_distances(p: np.ndarray, q: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """For each p-row: k-th NN distance within p (self excluded) and within q."""
    N = p.shape[0]
    rho = np.empty(N)
    nu = np.empty(N)
    for start in range(0, N, _CHUNK):
        stop = min(start + _CHUNK, N)
        dpp = cdist(p[start:stop], p)
        rows = np.arange(stop - start)
        dpp[rows, np.arange(start, stop)] = np.inf  # exclude self
        rho[start:stop] = np.partition(dpp, k - 1, axis=1)[:, k - 1]
        dpq = cdist(p[start:stop], q)
        nu[start:stop] = np.partition(dpq, k - 1, axis=1)[:, k - 1]
    return rho, nu


def knn_kl(p_samples: np.ndarray, q_samples: np.ndarray, k: int) -> float:
    """kNN estimate of D(p||q) from samples; may be negative at finite N.

    Duplicate points yielding zero distances are floored at 1e-12 and
    flagged with a DegenerateDistanceWarning. The per-sample log ratios are
    reduced with an exactly rounded sum, so the estimate is invariant under
    any common permutation of the sample order.
    """
    p = np.asarray(p_samples, dtype=float)
    q = np.asarray(q_samples, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if q.ndim == 1:
        q = q[:, None]
    if p.shape[1] != q.shape[1]:
        raise ValueError(f"dimension mismatch: {p.shape[1]} vs {q.shape[1]}")
    N, r = p.shape
    M = q.shape[0]
    if N <= k:
        raise ValueError(f"need more than k={k} p-samples, got {N}")
    if M < k:
        raise ValueError(f"need at least k={k} q-samples, got {M}")

    rho, nu = _kth_distances(p, q, k)
    degenerate = (rho <= 0.0) | (nu <= 0.0)
    if np.any(degenerate):
        warnings.warn(
            f"{int(np.sum(degenerate))} zero nearest-neighbor distances floored",
            DegenerateDistanceWarning,
        )
        rho = np.maximum(rho, DISTANCE_FLOOR)
        nu = np.maximum(nu, DISTANCE_FLOOR)
    log_ratios = np.log(nu) - np.log(rho)
    return (r / N) * math.fsum(log_ratios.tolist()) + math.log(M / (N - 1))


def stationary_bound(
    true_samples: np.ndarray,
    q: GaussianRef,
    cfg: KnnConfig,
    rng: np.random.Generator,
) -> float:
    """Ambiguity radius for stationary noise: kNN estimate against draws
    from the reference, floored at zero."""
    true_arr = np.asarray(true_samples, dtype=float)
    if true_arr.ndim == 1:
        true_arr = true_arr[:, None]
    if true_arr.shape[0] == 0:
        raise ValueError("true_samples must be nonempty")
    q_draws = q.sample(cfg.ref_samples, rng)
    return max(knn_kl(true_arr, q_draws, cfg.k), 0.0)


def horizon_bound(
    ts: TrainingSet,
    n: int,
    cfg: KnnConfig,
    rng: np.random.Generator,
) -> Tuple[float, np.ndarray]:
    """Global maximum KL bound over receding-horizon windows.

    Window j (j = 0..m-n-1) stacks the draws at states j..j+n of each
    realization index into N joint vectors of dimension c*(n+1), fits the
    joint reference as a zero-mean diagonal Gaussian by MLE, draws M joint
    samples from it, and estimates the window divergence with kNN. Returns
    (max over windows, the full per-window sequence). Per-window RNG streams
    are spawned from `rng` by window index, so results do not depend on
    evaluation order.
    """
    m, N, c = ts.m, ts.draws_per_state, ts.noise_dim
    if n >= m:
        raise WindowTooLarge(f"horizon n={n} needs m > n training states, got m={m}")
    num_windows = m - n
    child_rngs = rng.spawn(num_windows)
    per_window = np.empty(num_windows)
    for j in range(num_windows):
        # (N, c*(n+1)): realization i keeps its index across the n+1 states.
        joints = ts.samples[j : j + n + 1].transpose(1, 0, 2).reshape(N, c * (n + 1))
        joint_ref = GaussianRef(cov_diag=np.mean(joints * joints, axis=0))
        ref_draws = joint_ref.sample(cfg.ref_samples, child_rngs[j])
        per_window[j] = max(knn_kl(joints, ref_draws, cfg.k), 0.0)
    return float(np.max(per_window)), per_window
