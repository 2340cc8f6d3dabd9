"""Experiment runners: Monte Carlo sparsity validation, error benchmarks,
logit moment checks and weight-aware layer ranking.

Randomness is split into counter-based substreams: fixed streams for the
weights and the hasher, one stream per trial. Trials may run on a thread pool;
results are always assembled in (sweep value, trial) order.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from statsmodels.stats.proportion import proportion_confint

from .errors import ConfigError, DomainError, FormatError, ShapeMismatch
from .io import read_matrix
from .lsh import build_hasher
from .sparse import error_report, sparse_attention
from .tensor import (LayerNormParams, RngSpec, count_small, exact_attention,
                     sample_gaussian_matrix, softmax)
from .theory import (DEFAULT_DELTA, compute_profile, effective_weight, eps_b,
                     estimate_eps, p_sparse_lower_bound)

STREAM_WQ = 0
STREAM_WK = 1
STREAM_WV = 2
STREAM_LSH = 3
STREAM_TRIAL0 = 1 << 20

SPARSE_GATE = 0.99


@dataclass
class ExperimentConfig:
    n: int
    d: int
    k: int = 32
    delta: float = DEFAULT_DELTA
    r_bits: int = 8
    trials: int = 100
    seed: int = 0
    weight_std: float = 0.05
    target_r: float | None = None
    gamma: str = "ones"
    beta: str = "zeros"
    output_path: str | None = None
    workers: int = 1

    def validate(self, need_k: bool = True) -> None:
        for name in ("n", "d", "trials", "r_bits", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if need_k and not 0 < self.k <= self.n / 2:
            raise ConfigError(f"k must lie in (0, n/2], got k={self.k}, n={self.n}")
        if not 0 < self.delta <= 1:
            raise ConfigError(f"delta must lie in (0, 1], got {self.delta}")
        if self.weight_std < 0:
            raise ConfigError(f"weight_std must be >= 0, got {self.weight_std}")
        if self.target_r is not None and self.target_r <= 0:
            raise ConfigError(f"target R must be > 0, got {self.target_r}")

    def rng(self, stream: int) -> RngSpec:
        return RngSpec(self.seed, stream)


def _resolve_vector(spec: str, d: int, base: Path | None = None) -> np.ndarray:
    if spec == "ones":
        return np.ones(d)
    if spec == "zeros":
        return np.zeros(d)
    try:
        return np.full(d, float(spec))
    except ValueError:
        pass
    path = Path(spec)
    if base is not None and not path.is_absolute():
        path = base / path
    vec = read_matrix(path).reshape(-1)
    if vec.size != d:
        raise ShapeMismatch(f"{path}: expected a length-{d} vector, got {vec.size} entries")
    return vec


def layer_norm_params(cfg: ExperimentConfig) -> LayerNormParams:
    """``gamma``/``beta`` are ``ones``, ``zeros``, a numeric constant, or a matrix file."""
    return LayerNormParams(_resolve_vector(cfg.gamma, cfg.d), _resolve_vector(cfg.beta, cfg.d))


def _unit_weights(cfg: ExperimentConfig):
    z_q = sample_gaussian_matrix(cfg.d, cfg.d, 0.0, 1.0, cfg.rng(STREAM_WQ))
    z_k = sample_gaussian_matrix(cfg.d, cfg.d, 0.0, 1.0, cfg.rng(STREAM_WK))
    return z_q, z_k


def tune_weight_std(z_q, z_k, params: LayerNormParams, target_r: float) -> float:
    """Weight std whose effective weight has ``R == target_r`` (root-find on log R)."""
    def gap(log_std):
        s = math.exp(log_std)
        r = compute_profile(effective_weight(s * z_q, s * z_k), params).r_total
        return math.log(r) - math.log(target_r)

    if compute_profile(effective_weight(z_q, z_k), params).r_total <= 0:
        raise ConfigError("R is identically zero for these layer norm params; cannot tune")
    return math.exp(brentq(gap, math.log(1e-12), math.log(1e6), xtol=1e-14, rtol=1e-14))


@dataclass(frozen=True)
class WeightSetup:
    weight_std: float
    w_q: np.ndarray
    w_k: np.ndarray
    w: np.ndarray
    r: float
    b: float


def setup_weights(cfg: ExperimentConfig, params: LayerNormParams,
                  target_r: float | None = None) -> WeightSetup:
    z_q, z_k = _unit_weights(cfg)
    target = cfg.target_r if target_r is None else target_r
    std = cfg.weight_std if target is None else tune_weight_std(z_q, z_k, params, target)
    w_q, w_k = std * z_q, std * z_k
    w = effective_weight(w_q, w_k)
    prof = compute_profile(w, params)
    return WeightSetup(std, w_q, w_k, w, prof.r_total, prof.b)


def sample_inputs(n: int, d: int, params: LayerNormParams, rng: RngSpec) -> np.ndarray:
    """Layer-norm output for standard-normal pre-activations: ``X o gamma + beta``."""
    x = sample_gaussian_matrix(n, d, 0.0, 1.0, rng)
    return x * params.gamma + params.beta


def _map(fn, items, workers: int):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


@dataclass
class MonteCarloReport:
    trials: int
    sparse_hits: int
    observed_p: float
    wilson_lo: float
    wilson_hi: float
    theoretical_bound: float
    eps_used: float
    eps_mode: str
    R_measured: float
    eps_b: float
    eps_estimate: float
    alpha: float
    weight_std: float

    @property
    def wilson_half_width(self) -> float:
        return (self.wilson_hi - self.wilson_lo) / 2.0

    @property
    def passed(self) -> bool:
        return (self.observed_p >= SPARSE_GATE
                and self.observed_p >= self.theoretical_bound - self.wilson_half_width)

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["wilson_half_width"] = self.wilson_half_width
        out["passed"] = self.passed
        return out


def wilson_interval(hits: int, trials: int) -> tuple[float, float]:
    lo, hi = proportion_confint(hits, trials, alpha=0.05, method="wilson")
    p = hits / trials
    # guard the endpoints against last-ulp rounding at p = 0 or 1
    return min(max(float(lo), 0.0), p), max(min(float(hi), 1.0), p)


def run_sparsity_validation(cfg: ExperimentConfig, eps_mode: str = "theorem",
                            eps: float | None = None) -> MonteCarloReport:
    """Frequency with which a true softmax row is (eps, k)-sparse.

    ``eps_mode="theorem"`` tests at ``eps_b``, the smallest level the bound covers;
    ``"estimate"`` at the capped ``min(eps_b, 1/(n-k+delta))``. An explicit ``eps``
    overrides both.
    """
    cfg.validate()
    if cfg.k < 3:
        raise ConfigError("sparsity validation needs k >= 3 (eps_b is undefined below)")
    params = layer_norm_params(cfg)
    ws = setup_weights(cfg, params)
    if ws.r <= 0:
        raise DomainError("R = 0: the weights produce constant logits")
    est = estimate_eps(cfg.n, cfg.k, ws.r, cfg.delta)
    if eps is not None:
        eps_used, eps_mode = float(eps), "explicit"
    elif eps_mode == "theorem":
        eps_used = est.eps_b
    elif eps_mode == "estimate":
        eps_used = est.eps
    else:
        raise ConfigError(f"unknown eps mode {eps_mode!r}")
    if not 0 < eps_used < 1:
        raise DomainError(f"eps={eps_used} is outside (0, 1); no admissible sparsity level")

    scale = 1.0 / math.sqrt(cfg.d)
    n, k = cfg.n, cfg.k

    def trial(t):
        ln = sample_inputs(n, cfg.d, params, cfg.rng(STREAM_TRIAL0 + t))
        keys = ln @ ws.w_k
        query = ln[0] @ ws.w_q
        row = softmax((keys @ query) * scale)
        return bool(count_small(row, eps_used)[0] >= n - k)

    hits = sum(_map(trial, range(cfg.trials), cfg.workers))
    lo, hi = wilson_interval(hits, cfg.trials)
    return MonteCarloReport(
        trials=cfg.trials, sparse_hits=hits, observed_p=hits / cfg.trials,
        wilson_lo=lo, wilson_hi=hi,
        theoretical_bound=p_sparse_lower_bound(n, k, ws.r, eps_used),
        eps_used=eps_used, eps_mode=eps_mode, R_measured=ws.r, eps_b=est.eps_b,
        eps_estimate=est.eps, alpha=est.alpha, weight_std=ws.weight_std,
    )


SWEEPS = ("k", "r", "n")


def run_error_benchmark(cfg: ExperimentConfig, sweep: str, values, timing: bool = True) -> list[dict]:
    """Exact vs LSH-blocked attention, with and without the alpha correction.

    Trial ``t`` draws its inputs from the same substream at every sweep point, so
    sweep points are compared on common inputs. Without ``timing`` the time
    columns are zero and the rows are a pure function of the config.
    """
    if sweep not in SWEEPS:
        raise ConfigError(f"sweep must be one of {SWEEPS}, got {sweep!r}")
    cfg.validate(need_k=False)
    values = list(values)
    if not values:
        raise ConfigError("no sweep values given")
    params = layer_norm_params(cfg)
    hasher_seed = int(np.random.SeedSequence(cfg.seed, spawn_key=(STREAM_LSH,)).generate_state(1, np.uint64)[0])
    hasher = build_hasher(cfg.d, cfg.r_bits, hasher_seed)
    w_v = sample_gaussian_matrix(cfg.d, cfg.d, 0.0, 1.0, cfg.rng(STREAM_WV))

    points = []
    for v in values:
        n = int(v) if sweep == "n" else cfg.n
        k = int(v) if sweep == "k" else cfg.k
        if not 3 <= k <= n / 2:
            raise ConfigError(f"sweep point {v}: need 3 <= k <= n/2, got k={k}, n={n}")
        ws = setup_weights(cfg, params, target_r=float(v) if sweep == "r" else None)
        if ws.r <= 0:
            raise DomainError(f"sweep point {v}: R = 0")
        points.append((v, n, k, ws, estimate_eps(n, k, ws.r, cfg.delta)))

    def task(item):
        (v, n, k, ws, est), t = item
        ln = sample_inputs(n, cfg.d, params, cfg.rng(STREAM_TRIAL0 + t))
        q, kk, vv = ln @ ws.w_q, ln @ ws.w_k, ln @ w_v
        t0 = time.perf_counter_ns()
        ref = exact_attention(q, kk, vv)
        t1 = time.perf_counter_ns()
        approx = sparse_attention(q, kk, vv, est, hasher)
        t2 = time.perf_counter_ns()
        base = sparse_attention(q, kk, vv, est, hasher, alpha=1.0)
        rep = error_report(ref, approx, n, k, est.eps, vv)
        rep_base = error_report(ref, base, n, k, est.eps, vv)
        return {
            "sweep_value": v, "trial": t,
            "l2_sparse": rep.l2, "linf_sparse": rep.linf,
            "l2_noalpha": rep_base.l2, "linf_noalpha": rep_base.linf,
            "time_exact_us": (t1 - t0) / 1e3 if timing else 0.0,
            "time_sparse_us": (t2 - t1) / 1e3 if timing else 0.0,
            "bound_linf": rep.bound,
        }

    items = [(p, t) for p in points for t in range(cfg.trials)]
    return _map(task, items, cfg.workers)


def summarize_benchmark(rows: list[dict]) -> dict:
    """Per sweep value means of the error and time columns."""
    out: dict = {}
    for row in rows:
        out.setdefault(row["sweep_value"], []).append(row)
    keys = ("l2_sparse", "linf_sparse", "l2_noalpha", "linf_noalpha", "time_exact_us", "time_sparse_us")
    return {v: {key: float(np.mean([r[key] for r in rs])) for key in keys} for v, rs in out.items()}


@dataclass
class MomentReport:
    samples: int
    mean: float
    var: float
    b: float
    R: float
    mean_tol: float
    mean_ok: bool
    var_ok: bool

    @property
    def passed(self) -> bool:
        return self.mean_ok and self.var_ok


def run_kq_moment_check(cfg: ExperimentConfig, samples: int = 100_000) -> MomentReport:
    """Empirical mean/variance of scaled logits ``<q_i, k_j>/sqrt(d)`` against (b, R).

    Each simulated sequence of ``n`` rows contributes ``n // 2`` disjoint
    (query, key) row pairs, so every sample is independent.
    """
    cfg.validate(need_k=False)
    if cfg.n < 2:
        raise ConfigError("moment check needs n >= 2")
    if samples < 2:
        raise ConfigError("moment check needs at least 2 samples")
    params = layer_norm_params(cfg)
    ws = setup_weights(cfg, params)
    per_seq = cfg.n // 2
    n_seq = -(-samples // per_seq)
    scale = 1.0 / math.sqrt(cfg.d)

    def seq(s):
        ln = sample_inputs(cfg.n, cfg.d, params, cfg.rng(STREAM_TRIAL0 + s))
        q = ln[0:2 * per_seq:2] @ ws.w_q
        k = ln[1:2 * per_seq:2] @ ws.w_k
        return np.einsum("ij,ij->i", q, k) * scale

    vals = np.concatenate(_map(seq, range(n_seq), cfg.workers))[:samples]
    mean = float(vals.mean())
    var = float(vals.var(ddof=1))
    tol = 4.0 * math.sqrt(ws.r / samples)
    mean_ok = abs(mean - ws.b) <= tol
    var_ok = (var == 0.0) if ws.r == 0 else abs(var / ws.r - 1.0) <= 0.05
    return MomentReport(samples, mean, var, ws.b, ws.r, tol, mean_ok, var_ok)


@dataclass(frozen=True)
class LayerScore:
    layer_id: object
    R: float
    eps_b: float


@dataclass
class LayerRanking:
    entries: list[LayerScore] = field(default_factory=list)

    @property
    def order(self) -> list:
        return [e.layer_id for e in self.entries]


def _load_manifest(manifest):
    if isinstance(manifest, (str, Path)):
        path = Path(manifest)
        try:
            layers = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from None
        return layers, path.parent
    return list(manifest), None


def prioritize_layers(manifest, n: int, k: int) -> LayerRanking:
    """Rank layers by descending R; ties keep ascending layer_id.

    ``manifest`` is a JSON path or a list of ``{layer_id, w_q, w_k, gamma, beta}``
    dicts whose paths name AMAT (or CSV) files, relative to the manifest.
    """
    layers, base = _load_manifest(manifest)
    if not isinstance(layers, list):
        raise FormatError("manifest must be a JSON array")
    scores = []
    for entry in layers:
        try:
            lid = entry["layer_id"]
            paths = {key: Path(entry[key]) for key in ("w_q", "w_k", "gamma", "beta")}
        except (KeyError, TypeError):
            raise FormatError(f"manifest entry {entry!r} lacks layer_id/w_q/w_k/gamma/beta") from None
        if base is not None:
            paths = {key: p if p.is_absolute() else base / p for key, p in paths.items()}
        w_q, w_k = read_matrix(paths["w_q"]), read_matrix(paths["w_k"])
        d = w_q.shape[0]
        params = LayerNormParams(read_matrix(paths["gamma"]).reshape(-1),
                                 read_matrix(paths["beta"]).reshape(-1))
        if params.d != d:
            raise ShapeMismatch(f"layer {lid}: weights are {d}-dimensional, layer norm params {params.d}")
        r = compute_profile(effective_weight(w_q, w_k), params).r_total
        try:
            eb = eps_b(n, k, r)
        except DomainError:
            eb = math.nan
        scores.append(LayerScore(lid, r, eb))
    scores.sort(key=lambda s: (-s.R, s.layer_id))
    return LayerRanking(scores)


@dataclass
class CollisionReport:
    theta: float
    r_bits: int
    pairs: int
    collisions: int
    expected: float

    @property
    def rate(self) -> float:
        return self.collisions / self.pairs

    @property
    def sigma(self) -> float:
        return math.sqrt(self.expected * (1.0 - self.expected) / self.pairs)

    @property
    def z(self) -> float:
        gap = abs(self.rate - self.expected)
        return 0.0 if gap == 0 else (gap / self.sigma if self.sigma > 0 else math.inf)


def run_collision_check(d: int, r_bits: int, theta: float, pairs: int, seed: int) -> CollisionReport:
    """Collision frequency of pairs at angle ``theta``, one fresh hasher per pair.

    The collision law is a statement about a random draw of the hash function,
    so pair ``i`` is hashed by ``build_hasher(d, r_bits, seed_i)`` with its own seed.
    """
    if d < 2:
        raise ConfigError("need d >= 2 to place two vectors at an angle")
    gen = RngSpec(seed, STREAM_TRIAL0).generator()
    seeds = np.random.SeedSequence(seed).generate_state(pairs, np.uint64)
    hits = 0
    for i in range(pairs):
        x = gen.standard_normal(d)
        x /= np.linalg.norm(x)
        u = gen.standard_normal(d)
        u -= (u @ x) * x
        u /= np.linalg.norm(u)
        y = math.cos(theta) * x + math.sin(theta) * u
        h = build_hasher(d, r_bits, int(seeds[i]))
        b = h.hash_rows(np.vstack([x, y]))
        hits += int(b[0] == b[1])
    return CollisionReport(theta, r_bits, pairs, hits, (1.0 - theta / math.pi) ** r_bits)


@dataclass
class IdealBoundReport:
    instances: int
    hypothesis_rows: int
    total_rows: int
    covered_instances: int
    violations: int
    worst_ratio: float
    eps: float

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.covered_instances > 0


def run_ideal_bound_check(cfg: ExperimentConfig, instances: int = 100) -> IdealBoundReport:
    """Ideal oracle vs exact attention on ``instances`` seeded inputs.

    The sup-norm bound ``(n-k) eps max|V|`` is checked on the rows that are
    (eps, k)-sparse; an instance counts as covered when it has at least one such
    row. ``worst_ratio`` is the largest ``error / bound`` seen on those rows.
    """
    from .sparse import ideal_sparse_attention

    cfg.validate()
    params = layer_norm_params(cfg)
    ws = setup_weights(cfg, params)
    if ws.r <= 0:
        raise DomainError("R = 0: the weights produce constant logits")
    eps = estimate_eps(cfg.n, cfg.k, ws.r, cfg.delta).eps
    w_v = sample_gaussian_matrix(cfg.d, cfg.d, 0.0, 1.0, cfg.rng(STREAM_WV))

    def instance(s):
        ln = sample_inputs(cfg.n, cfg.d, params, cfg.rng(STREAM_TRIAL0 + s))
        q, k, v = ln @ ws.w_q, ln @ ws.w_k, ln @ w_v
        res = ideal_sparse_attention(q, k, v, eps, cfg.k)
        rows = res.hypothesis_rows(cfg.k)
        bound = (cfg.n - cfg.k) * eps * float(np.max(np.abs(v)))
        err = np.max(np.abs(exact_attention(q, k, v) - res.t), axis=1)[rows]
        worst = float(err.max()) if err.size else 0.0
        return int(rows.sum()), worst <= bound, worst / bound

    out = _map(instance, range(instances), cfg.workers)
    return IdealBoundReport(
        instances=instances, hypothesis_rows=sum(o[0] for o in out), total_rows=instances * cfg.n,
        covered_instances=sum(o[0] > 0 for o in out),
        violations=sum(not o[1] for o in out), worst_ratio=max(o[2] for o in out), eps=eps)
