"""Learning the noise reference distribution from observed data.

Two estimators for the zero-mean Gaussian reference q:

* stationary noise: per-dimension maximum-likelihood variances (second
  moments about zero) from a pool of samples;
* state-dependent noise: one GP per state dimension, trained on
  (state coordinate, MLE variance) pairs with a zero-mean prior and
  squared-exponential kernel k(a, a') = sigma^2 exp(-(a-a')^2 / (2 l^2)),
  hyperparameters (signal variance, length scale, and a fitted observation
  noise) selected by maximizing the log marginal likelihood over random
  restarts. Prediction clamps variances at a small positive floor so the
  result is always a valid diagonal covariance.

The module also hosts the Gaussian-mixture "true noise" generators used by
the experiments and the grid-based training-data collection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky
from scipy.optimize import minimize

from .dynamics import PlantModel
from .errors import IllConditionedKernel, TooFewSamples

VAR_FLOOR = 1e-8  # clamp for predicted variances

_JITTERS = (1e-12, 1e-10, 1e-8, 1e-6)


@dataclass(frozen=True)
class GaussianRef:
    """Zero-mean Gaussian reference with diagonal covariance."""

    cov_diag: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.cov_diag, dtype=float)
        if d.ndim != 1 or np.any(d < 0):
            raise ValueError("cov_diag must be a nonnegative vector")
        object.__setattr__(self, "cov_diag", d)

    @property
    def mean(self) -> np.ndarray:
        return np.zeros_like(self.cov_diag)

    @property
    def dim(self) -> int:
        return self.cov_diag.shape[0]

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Draw `count` samples, shape (count, dim)."""
        z = rng.standard_normal((count, self.dim))
        return z * np.sqrt(self.cov_diag)[None, :]


@dataclass
class TrainingSet:
    """States with repeated noise observations: states (m, d), samples (m, N, c)."""

    states: np.ndarray
    samples: np.ndarray
    grid_spec: Optional[List[List[float]]] = None
    seed: Optional[int] = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.samples = np.asarray(self.samples, dtype=float)
        if self.states.ndim != 2 or self.samples.ndim != 3:
            raise ValueError("states must be (m, d), samples (m, N, c)")
        if self.samples.shape[0] != self.states.shape[0]:
            raise ValueError("states and samples disagree on m")

    @property
    def m(self) -> int:
        return self.states.shape[0]

    @property
    def draws_per_state(self) -> int:
        return self.samples.shape[1]

    @property
    def noise_dim(self) -> int:
        return self.samples.shape[2]


def mle_gaussian(samples: Sequence[np.ndarray]) -> GaussianRef:
    """ML fit of a zero-mean diagonal Gaussian: per-dimension second moments.

    Uses the 1/N normalization about zero (the reference mean is fixed at
    zero). Requires at least two samples.
    """
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] < 2:
        raise TooFewSamples(f"need >= 2 samples, got {arr.shape[0]}")
    return GaussianRef(cov_diag=np.mean(arr * arr, axis=0))


# ---------------------------------------------------------------------------
# Gaussian process on a scalar input
# ---------------------------------------------------------------------------

def _group_duplicates(x: np.ndarray, y: np.ndarray):
    """Collapse duplicate inputs into sufficient statistics.

    Returns (distinct inputs, group means, group counts, total within-group
    sum of squares). A GP with iid observation noise depends on duplicated
    observations only through these statistics, so the collapsed marginal
    likelihood is exact.
    """
    xs, inverse = np.unique(x, return_inverse=True)
    counts = np.bincount(inverse).astype(float)
    sums = np.bincount(inverse, weights=y)
    means = sums / counts
    ss = np.bincount(inverse, weights=(y - means[inverse]) ** 2)
    return xs, means, counts, float(np.sum(ss)), ss


def _collapsed_nll_and_grad(params, xs, means, counts, ss_total, sq_dist):
    """Negative collapsed log marginal likelihood and gradient.

    params = (log signal variance, log length scale, log noise variance).
    """
    log_sf2, log_l, log_sn2 = params
    sf2, l, sn2 = np.exp(log_sf2), np.exp(log_l), np.exp(log_sn2)
    G = xs.shape[0]
    n_extra = counts - 1.0

    K = sf2 * np.exp(-0.5 * sq_dist / (l * l))
    Ky = K + np.diag(sn2 / counts)
    Ky[np.diag_indices_from(Ky)] += 1e-10 * max(sf2, sn2, 1e-300)
    try:
        L = cholesky(Ky, lower=True)
    except np.linalg.LinAlgError:
        return 1e25, np.zeros(3)
    alpha = cho_solve((L, True), means)
    lml = (
        -0.5 * float(means @ alpha)
        - float(np.sum(np.log(np.diag(L))))
        - 0.5 * G * np.log(2 * np.pi)
    )
    # Exact contribution of the collapsed duplicate observations.
    lml += float(
        -0.5 * np.sum(n_extra) * np.log(2 * np.pi * sn2)
        - ss_total / (2 * sn2)
        - 0.5 * np.sum(np.log(counts))
    )

    Ky_inv = cho_solve((L, True), np.eye(G))
    M = np.outer(alpha, alpha) - Ky_inv
    dK_dlsf2 = K
    dK_dll = K * (sq_dist / (l * l))
    grad = np.array(
        [
            0.5 * np.sum(M * dK_dlsf2),
            0.5 * np.sum(M * dK_dll),
            0.5 * float(np.diag(M) @ (sn2 / counts))
            - 0.5 * np.sum(n_extra)
            + ss_total / (2 * sn2),
        ]
    )
    return -lml, -grad


@dataclass
class GpModel:
    """Scalar-input GP with squared-exponential kernel and fitted noise.

    Stores the full training pairs; duplicate inputs are collapsed internally
    (exact sufficient statistics), so grid-factored training sets with few
    distinct coordinates stay cheap.
    """

    inputs: np.ndarray
    targets: np.ndarray
    signal_variance: float
    length_scale: float
    noise_variance: float
    jitter: float = 0.0
    log_marginal_likelihood: float = float("nan")
    _xs: np.ndarray = field(init=False, repr=False)
    _alpha: np.ndarray = field(init=False, repr=False)
    _chol: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.signal_variance <= 0 or self.length_scale <= 0:
            raise ValueError("signal variance and length scale must be > 0")
        self._build_cache()

    def _kernel(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        d = a[:, None] - b[None, :]
        return self.signal_variance * np.exp(-0.5 * (d / self.length_scale) ** 2)

    def _build_cache(self):
        xs, means, counts, _, _ = _group_duplicates(self.inputs, self.targets)
        Ky = self._kernel(xs, xs) + np.diag(self.noise_variance / counts)
        scale = max(self.signal_variance, self.noise_variance, 1e-300)
        for jit in (self.jitter,) + tuple(j * scale for j in _JITTERS):
            try:
                cf = cho_factor(Ky + jit * np.eye(xs.shape[0]), lower=True)
                self.jitter = jit
                break
            except np.linalg.LinAlgError:
                continue
        else:
            raise IllConditionedKernel(
                f"kernel matrix not PD after jitter escalation to {_JITTERS[-1]*scale:g}"
            )
        self._xs = xs
        self._chol = cf
        self._alpha = cho_solve(cf, means)

    def posterior(self, x: np.ndarray, include_noise: bool = True):
        """Posterior mean and variance at query points x (scalar or array)."""
        xq = np.atleast_1d(np.asarray(x, dtype=float))
        Kx = self._kernel(xq, self._xs)
        mean = Kx @ self._alpha
        v = cho_solve(self._chol, Kx.T)
        var = self.signal_variance - np.einsum("ij,ji->i", Kx, v)
        var = np.maximum(var, 0.0)
        if include_noise:
            var = var + self.noise_variance
        if np.isscalar(x) or np.ndim(x) == 0:
            return float(mean[0]), float(var[0])
        return mean, var

    def to_dict(self) -> dict:
        return {
            "inputs": self.inputs.tolist(),
            "targets": self.targets.tolist(),
            "signal_variance": float(self.signal_variance),
            "length_scale": float(self.length_scale),
            "noise_variance": float(self.noise_variance),
            "jitter": float(self.jitter),
            "log_marginal_likelihood": float(self.log_marginal_likelihood),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GpModel":
        return cls(
            inputs=np.asarray(d["inputs"], dtype=float),
            targets=np.asarray(d["targets"], dtype=float),
            signal_variance=d["signal_variance"],
            length_scale=d["length_scale"],
            noise_variance=d["noise_variance"],
            jitter=d.get("jitter", 0.0),
            log_marginal_likelihood=d.get("log_marginal_likelihood", float("nan")),
        )


def fit_gp(
    inputs: np.ndarray,
    targets: np.ndarray,
    rng: np.random.Generator,
    restarts: int = 8,
) -> GpModel:
    """Fit the scalar GP by maximizing the log marginal likelihood.

    Multi-start L-BFGS-B in log-parameter space with analytic gradients.
    The selected point is never worse than any restart's initialization.
    """
    x = np.asarray(inputs, dtype=float)
    y = np.asarray(targets, dtype=float)
    xs, means, counts, ss_total, _ = _group_duplicates(x, y)
    sq_dist = (xs[:, None] - xs[None, :]) ** 2

    s2 = float(np.var(means))
    if s2 < 1e-12:
        s2 = max(float(np.mean(means**2)), 1e-12)
    span = float(xs.max() - xs.min()) if xs.shape[0] > 1 else 1.0
    span = max(span, 1e-6)

    lo = np.log([1e-6 * s2, 1e-3 * span, 1e-9 * s2])
    hi = np.log([1e4 * s2, 1e2 * span, 1e2 * s2])
    bounds = list(zip(lo, hi))

    def nll(p):
        return _collapsed_nll_and_grad(p, xs, means, counts, ss_total, sq_dist)

    inits = [np.log([s2, 0.3 * span, max(0.01 * s2, 1e-8 * s2)])]
    for _ in range(max(restarts - 1, 0)):
        inits.append(rng.uniform(lo, hi))

    best_p, best_val = None, np.inf
    for p0 in inits:
        val0 = nll(p0)[0]
        if val0 < best_val:
            best_p, best_val = p0, val0
        res = minimize(nll, p0, jac=True, method="L-BFGS-B", bounds=bounds)
        if res.fun < best_val:
            best_p, best_val = res.x, res.fun

    sf2, l, sn2 = np.exp(best_p)
    return GpModel(
        inputs=x,
        targets=y,
        signal_variance=float(sf2),
        length_scale=float(l),
        noise_variance=float(sn2),
        log_marginal_likelihood=-float(best_val),
    )


def fit_state_dependent(
    ts: TrainingSet, seed: int = 0, restarts: int = 8
) -> List[GpModel]:
    """Train one GP per state dimension on (coordinate, MLE variance) pairs.

    For every training state the per-dimension noise variance is the MLE
    second moment of its draws; dimension i's GP sees only the i-th state
    coordinate as input (dimensions are modeled as independent).
    """
    if ts.draws_per_state < 2:
        raise TooFewSamples("need >= 2 draws per state for variance targets")
    variances = np.mean(ts.samples**2, axis=1)  # (m, c)
    rng = np.random.default_rng(seed)
    gps = []
    for i in range(ts.noise_dim):
        gps.append(fit_gp(ts.states[:, i], variances[:, i], rng, restarts=restarts))
    return gps


def predict_ref(gps: Sequence[GpModel], x: np.ndarray) -> GaussianRef:
    """State-dependent reference N(0, diag(v^)) with clamped GP means."""
    x = np.asarray(x, dtype=float)
    if len(gps) != x.shape[0]:
        raise ValueError(f"need one GP per state dimension ({x.shape[0]})")
    diag = np.empty(len(gps))
    for i, gp in enumerate(gps):
        mean, _ = gp.posterior(float(x[i]))
        diag[i] = max(mean, VAR_FLOOR)
    return GaussianRef(cov_diag=diag)


class StationaryRef:
    """Fixed reference covariance; callable x -> diagonal."""

    def __init__(self, cov_diag: np.ndarray):
        self.cov_diag = np.asarray(cov_diag, dtype=float)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.cov_diag


class StateDependentRef:
    """GP-backed reference covariance; callable x -> clamped diagonal."""

    def __init__(self, gps: Sequence[GpModel], floor: float = VAR_FLOOR):
        self.gps = list(gps)
        self.floor = floor

    def __call__(self, x: np.ndarray) -> np.ndarray:
        diag = np.empty(len(self.gps))
        for i, gp in enumerate(self.gps):
            mean, _ = gp.posterior(float(x[i]))
            diag[i] = max(mean, self.floor)
        return diag


# ---------------------------------------------------------------------------
# True-noise mixtures and training-data collection
# ---------------------------------------------------------------------------

@dataclass
class MixtureNoise:
    """Finite Gaussian mixture with state-dependent diagonal covariances.

    Each component i is N(0, W_i(x)); cov_fns[i] maps a state to the
    diagonal of W_i(x).
    """

    weights: np.ndarray
    cov_fns: List[Callable[[np.ndarray], np.ndarray]]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(float(np.sum(w)) - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        self.weights = w

    @property
    def components(self) -> int:
        return self.weights.shape[0]

    def draw_raw(self, rng: np.random.Generator, count: int, dim: int):
        """Component indices and standard-normal draws, before state scaling.

        Keeping the raw stream separate from the state makes common-random-
        number pairing across controllers possible even though realized
        noise depends on the visited states.
        """
        comps = rng.choice(self.components, size=count, p=self.weights)
        z = rng.standard_normal((count, dim))
        return comps, z

    def realize(self, comp: int, z: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Scale a raw draw by the chosen component's covariance at state x."""
        return z * np.sqrt(self.cov_fns[comp](x))

    def cov_diag(self, x: np.ndarray) -> np.ndarray:
        """Mixture covariance diagonal sum_i pi_i W_i(x)."""
        return sum(
            w * np.asarray(fn(x), dtype=float)
            for w, fn in zip(self.weights, self.cov_fns)
        )


def sample_true_noise(
    mix: MixtureNoise, x: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """One draw from the mixture at state x: component ~ Categorical(pi),
    then N(0, W_i(x))."""
    x = np.asarray(x, dtype=float)
    comps, z = mix.draw_raw(rng, 1, x.shape[0])
    return mix.realize(int(comps[0]), z[0], x)


def gaussian_bump_mixture(
    weights: Sequence[float],
    xy_params: Sequence[Tuple[float, float]],
    theta_var: float = 1.3e-4,
    v_var: float = 2.2e-3,
    center: Tuple[float, float] = (2.5, 2.5),
    width: float = 0.5,
) -> MixtureNoise:
    """Mixture whose x/y variances carry a Gaussian bump over the plane.

    Component i has x- and y-variance base_i + amp_i * exp(-((x-cx)^2 +
    (y-cy)^2) / width), and constant yaw/speed variances. This reproduces
    the elevated-variance region 2 <= x, y <= 3 used by the navigation
    experiments.
    """
    cx, cy = center

    def make_fn(base: float, amp: float):
        def fn(state: np.ndarray) -> np.ndarray:
            bump = np.exp(-((state[0] - cx) ** 2 + (state[1] - cy) ** 2) / width)
            v_xy = base + amp * bump
            return np.array([v_xy, v_xy, theta_var, v_var])

        return fn

    return MixtureNoise(
        weights=np.asarray(weights, dtype=float),
        cov_fns=[make_fn(b, a) for b, a in xy_params],
    )


def grid_states(grid_spec: Sequence[Sequence[float]]) -> np.ndarray:
    """Uniform grid over the state space; spec rows are (lo, hi, count).

    Returns (m, d) states in C order (first dimension slowest), with
    m = product of counts.
    """
    axes = [np.linspace(lo, hi, int(count)) for lo, hi, count in grid_spec]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def collect_training_data(
    model: PlantModel,
    mix: MixtureNoise,
    grid_spec: Sequence[Sequence[float]],
    N: int,
    rng: np.random.Generator,
    seed: Optional[int] = None,
) -> TrainingSet:
    """Collect N noise observations at each grid state under zero control.

    At each state the known (zero) control is applied, the transition is
    observed, and the noise is recovered as x_next - x - f(x, 0) dt, which
    is exact because the noise enters additively.
    """
    states = grid_states(grid_spec)
    m, d = states.shape
    u0 = np.zeros(model.control_dim)
    samples = np.empty((m, N, d))
    for j in range(m):
        x = states[j]
        drift_term = model.drift(x, u0) * model.dt
        comps, z = mix.draw_raw(rng, N, d)
        scales = np.stack([np.sqrt(mix.cov_fns[c](x)) for c in range(mix.components)])
        w = z * scales[comps]
        x_next = x[None, :] + drift_term[None, :] + w
        samples[j] = x_next - x[None, :] - drift_term[None, :]
    return TrainingSet(
        states=states,
        samples=samples,
        grid_spec=[list(map(float, row)) for row in grid_spec],
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_training_set(ts: TrainingSet, path: str):
    """Columnar binary file: one JSON header line, then raw float64 blocks."""
    header = {
        "format": "droc-training-set",
        "version": 1,
        "dims": int(ts.noise_dim),
        "m": int(ts.m),
        "N": int(ts.draws_per_state),
        "state_dim": int(ts.states.shape[1]),
        "grid_spec": ts.grid_spec,
        "seed": ts.seed,
        "dtype": "<f8",
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(ts.states, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ts.samples, dtype="<f8").tobytes())


def load_training_set(path: str) -> TrainingSet:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != "droc-training-set":
            raise ValueError(f"{path} is not a training-set file")
        m, N = header["m"], header["N"]
        d, c = header["state_dim"], header["dims"]
        states = np.frombuffer(fh.read(m * d * 8), dtype="<f8").reshape(m, d)
        samples = np.frombuffer(fh.read(m * N * c * 8), dtype="<f8").reshape(m, N, c)
    return TrainingSet(
        states=states.copy(),
        samples=samples.copy(),
        grid_spec=header.get("grid_spec"),
        seed=header.get("seed"),
    )


def save_gp_models(gps: Sequence[GpModel], path: str):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([gp.to_dict() for gp in gps], fh, sort_keys=True, indent=1)


def load_gp_models(path: str) -> List[GpModel]:
    with open(path, "r", encoding="utf-8") as fh:
        return [GpModel.from_dict(d) for d in json.load(fh)]
