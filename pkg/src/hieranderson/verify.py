"""Monte Carlo checks, convergence studies and bound monitors.

Every experiment draws sample ``s`` from normals ``s*P .. (s+1)*P - 1`` of
the base stream, so results are a pure function of ``(seed, s)``. Samples
are processed in chunks whose size depends only on the lattice, never on
the number of workers; per-sample results are concatenated in index order
before any reduction, which makes the output independent of parallelism.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy import stats

from .errors import InsufficientDataError, LargeFieldSingularity
from .flow import Couplings, run_flow
from .noise import (EnhancedNoise, NoiseConfig, alpha_of, sample_base,
                    wick_constant)
from .norms import (KAPPA_S_DEFAULT, besov_norm, holder_distance, level_sup,
                    omega_indicator, stochastic_norm, uniform_stochastic_norm)
from .operators import apply_fluct_propagator, coarsen, fluct, refine
from .solver import BareProblem, reconstruct_u, residual, rg_solve

__all__ = [
    "McEstimate",
    "map_samples",
    "mc_pair_moment",
    "mc_fluct_covariance",
    "mc_chaos_increment_variance",
    "sample_uniform_norms",
    "TailReport",
    "mc_tail_probability",
    "MomentReport",
    "mc_norm_moment_growth",
    "ConvergenceReport",
    "convergence_study",
    "AblationReport",
    "ablate_counterterm",
    "BoundReport",
    "monitor_bounds",
    "fit_line",
]

# target number of lattice values per chunk
_CHUNK_VALUES = 1 << 20


def chunk_size(points: int) -> int:
    return max(1, _CHUNK_VALUES // points)


def map_samples(fn, samples: int, start: int = 0, chunk: int = 1024,
                workers: int = 1):
    """Apply ``fn(start, count)`` over fixed-size chunks, concatenating in order.

    ``fn`` returns a dict of per-sample arrays (leading axis ``count``).
    """
    starts = list(range(start, start + samples, chunk))
    counts = [min(chunk, start + samples - s) for s in starts]
    if workers > 1 and len(starts) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(fn, starts, counts))
    else:
        parts = [fn(s, c) for s, c in zip(starts, counts)]
    if not parts:
        return {}
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


@dataclass
class McEstimate:
    """Monte Carlo estimate of a quantity with a known target."""

    name: str
    estimate: float
    stderr: float
    target: float
    samples: int
    seed: int

    @property
    def z(self) -> float:
        if self.stderr == 0.0:
            return 0.0 if self.estimate == self.target else math.inf
        return (self.estimate - self.target) / self.stderr

    def passed(self, zmax: float = 3.0) -> bool:
        return abs(self.z) <= zmax


def _mean_estimate(name, x, target, seed):
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise InsufficientDataError(f"{name}: need at least 2 samples")
    return McEstimate(name, float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)),
                      float(target), int(x.size), seed)


def _center(f, d):
    idx = (f.shape[-1] // 2,) * d
    return f[(Ellipsis,) + idx]


def _pair_moment_chunk(start, count, L, d, depth, seed):
    base = sample_base(NoiseConfig(seed, depth, L, d), count, start)
    h = base * apply_fluct_propagator(base, depth, L, d)
    for _ in range(depth):
        h = coarsen(h, L, d)
    return {"x": h.reshape(count)}


def mc_pair_moment(L: int, d: int, depth: int, samples: int, seed: int,
                   workers: int = 1) -> McEstimate:
    """``E[coarsen^depth(xi Gamma_depth xi)]`` against ``wick_constant(depth)``."""
    fn = partial(_pair_moment_chunk, L=L, d=d, depth=depth, seed=seed)
    out = map_samples(fn, samples, chunk=chunk_size(L ** (depth * d)),
                      workers=workers)
    return _mean_estimate(f"pair_moment_depth{depth}", out["x"],
                          wick_constant(depth, L, d), seed)


def _fluct_cov_chunk(start, count, L, d, n, seed, offsets):
    base = sample_base(NoiseConfig(seed, n, L, d), count, start)
    pxi = fluct(base, L, d)
    c = base.shape[-1] // 2
    x0 = pxi[(Ellipsis,) + (c,) * d]
    cols = [x0 * pxi[(Ellipsis,) + tuple(c + o for o in off)] for off in offsets]
    return {"x": np.stack(cols, axis=-1)}


def mc_fluct_covariance(L: int, d: int, samples: int, seed: int, n: int = 2,
                        workers: int = 1) -> list:
    """Covariance of ``P1 xi`` between the origin and nearby points.

    Targets: ``delta - L**-d`` inside the origin's block, 0 for the point
    ``(L, 0, ...)`` in the neighbouring block.
    """
    if n < 2:
        raise ValueError("need level >= 2 to reach a second block")
    h = (L - 1) // 2
    offsets = list(itertools.product(range(-h, h + 1), repeat=d))
    offsets.append((L,) + (0,) * (d - 1))
    fn = partial(_fluct_cov_chunk, L=L, d=d, n=n, seed=seed, offsets=offsets)
    out = map_samples(fn, samples, chunk=chunk_size(L ** (n * d)),
                      workers=workers)["x"]
    res = []
    for j, off in enumerate(offsets):
        if j == len(offsets) - 1:
            target = 0.0
        else:
            target = (1.0 if all(o == 0 for o in off) else 0.0) - float(L) ** -d
        res.append(_mean_estimate(f"fluct_cov{off}", out[:, j], target, seed))
    return res


def _increment_chunk(start, count, L, d, n, K, seed):
    noise = EnhancedNoise.sample(NoiseConfig(seed, K, L, d), count, start)
    inc = noise.chaos_at(K, n) - noise.chaos_at(K - 1, n)
    return {"x": _center(inc, d).reshape(count)}


def mc_chaos_increment_variance(L: int, d: int, n: int, K: int, samples: int,
                                seed: int, workers: int = 1) -> McEstimate:
    """``Var((chaos^(K) - chaos^(K-1))_n(0))`` against
    ``2 (1 - L**-d) L**(-2 alpha (K - n))``."""
    if not 0 <= n < K:
        raise ValueError("need 0 <= n < K")
    fn = partial(_increment_chunk, L=L, d=d, n=n, K=K, seed=seed)
    x = map_samples(fn, samples, chunk=chunk_size(L ** (K * d)),
                    workers=workers)["x"]
    target = 2.0 * (1.0 - float(L) ** -d) * float(L) ** (-2.0 * alpha_of(d) * (K - n))
    return _mean_estimate(f"chaos_increment_var_n{n}_K{K}", x ** 2, target, seed)


def _norm_chunk(start, count, L, d, Nmax, kappa_s, seed):
    noise = EnhancedNoise.sample(NoiseConfig(seed, Nmax, L, d), count, start)
    return {"norm": uniform_stochastic_norm(noise, kappa_s).reshape(count)}


def sample_uniform_norms(L: int, d: int, Nmax: int, kappa_s: float,
                         samples: int, seed: int, start: int = 0,
                         workers: int = 1) -> np.ndarray:
    """Uniform stochastic norm (max over cutoffs ``N <= Nmax``) per sample."""
    fn = partial(_norm_chunk, L=L, d=d, Nmax=Nmax, kappa_s=kappa_s, seed=seed)
    return map_samples(fn, samples, start=start,
                       chunk=chunk_size(L ** (Nmax * d)), workers=workers)["norm"]


def fit_line(x, y):
    """Least-squares line. Returns ``(slope, intercept, r_squared)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise InsufficientDataError("need at least two points to fit a line")
    res = stats.linregress(x, y)
    return float(res.slope), float(res.intercept), float(res.rvalue ** 2)


@dataclass
class TailReport:
    """Empirical ``P(norm > 1/(2g))`` on a grid of ``g``."""

    g: np.ndarray
    exceed: np.ndarray
    probability: np.ndarray
    samples: int
    seed: int
    kappa_s: float
    slope: float
    intercept: float
    r_squared: float

    @property
    def monotone(self) -> bool:
        order = np.argsort(1.0 / self.g)
        p = self.probability[order]
        return bool(np.all(np.diff(p) <= 0.0))


def mc_tail_probability(L: int, d: int, Nmax: int, g_grid, kappa_s: float,
                        samples: int, seed: int, workers: int = 1,
                        norms=None) -> TailReport:
    """Tail of the uniform stochastic norm and a fit of ``log P`` against ``g**-2``."""
    g = np.asarray(g_grid, dtype=float)
    if norms is None:
        norms = sample_uniform_norms(L, d, Nmax, kappa_s, samples, seed,
                                     workers=workers)
    exceed = np.array([int(np.sum(~omega_indicator(norms, gi))) for gi in g])
    prob = exceed / float(len(norms))
    keep = prob > 0
    if keep.sum() >= 2:
        slope, icpt, r2 = fit_line(g[keep] ** -2.0, np.log(prob[keep]))
    else:
        slope = icpt = r2 = float("nan")
    return TailReport(g, exceed, prob, len(norms), seed, kappa_s, slope, icpt, r2)


@dataclass
class MomentReport:
    """``E[norm**p]**(1/p)`` on a grid of ``p`` and its log-log slope."""

    p: np.ndarray
    moment: np.ndarray
    samples: int
    seed: int
    kappa_s: float
    slope: float


def mc_norm_moment_growth(L: int, d: int, Nmax: int, p_grid, kappa_s: float,
                          samples: int, seed: int, workers: int = 1,
                          norms=None) -> MomentReport:
    p = np.asarray(p_grid, dtype=float)
    if norms is None:
        norms = sample_uniform_norms(L, d, Nmax, kappa_s, samples, seed,
                                     workers=workers)
    mom = np.array([np.mean(norms ** pi) ** (1.0 / pi) for pi in p])
    slope, _, _ = fit_line(np.log(p), np.log(mom))
    return MomentReport(p, mom, len(norms), seed, kappa_s, slope)


def _collect_omega(L, d, Nmax, g, kappa_s, samples, seed, workers, max_draws):
    """Sample indices of the first ``samples`` draws that lie in the good event."""
    accepted = []
    drawn = 0
    step = max(samples, 1)
    while len(accepted) < samples and drawn < max_draws:
        n = min(step, max_draws - drawn)
        norms = sample_uniform_norms(L, d, Nmax, kappa_s, n, seed, start=drawn,
                                     workers=workers)
        ok = np.nonzero(omega_indicator(norms, g))[0] + drawn
        accepted.extend(int(i) for i in ok[:samples - len(accepted)])
        if len(accepted) >= samples:
            drawn = accepted[-1] + 1
        else:
            drawn += n
    return accepted, drawn


def _runs(idx):
    """Split sorted indices into ``(start, count)`` runs of consecutive values."""
    runs = []
    for i in idx:
        if runs and runs[-1][0] + runs[-1][1] == i:
            runs[-1][1] += 1
        else:
            runs.append([i, 1])
    return [(s, c) for s, c in runs]


def _gather(fn, idx, chunk, workers):
    """Run a per-chunk function over an arbitrary sorted index set."""
    jobs = []
    for s, c in _runs(idx):
        for a in range(s, s + c, chunk):
            jobs.append((a, min(chunk, s + c - a)))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(fn, [j[0] for j in jobs], [j[1] for j in jobs]))
    else:
        parts = [fn(a, c) for a, c in jobs]
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


@dataclass
class ConvergenceReport:
    """Distances between consecutive cutoffs ``N`` and ``N + 1``.

    ``distances[name][j]`` is the sample mean of the distance for cutoff
    pair ``(N[j], N[j] + 1)``; ``rates[name]`` the least-squares slope of
    its logarithm against ``N`` (negative means geometric convergence).
    """

    N: np.ndarray
    distances: dict
    rates: dict
    per_sample: dict = field(repr=False)
    v_consistency: float = 0.0
    usable: int = 0
    rejected: int = 0
    drawn: int = 0
    seed: int = 0
    kappa_s: float = KAPPA_S_DEFAULT


def _convergence_chunk(start, count, L, d, Nmax, Nmin, g, r, kappa_s, seed):
    noise = EnhancedNoise.sample(NoiseConfig(seed, Nmax, L, d), count, start)
    c = Couplings(g, r)
    kappa_v = 3.0 * kappa_s + 0.01
    flows, sols, consist = {}, {}, []
    for N in range(Nmin, Nmax + 1):
        flows[N] = run_flow(noise, c, N)
        p = BareProblem(noise, c, N)
        sols[N] = rg_solve(p)
        consist.append(residual(p, sols[N].v[N]))
    out = {k: [] for k in ("chaos", "psi", "v", "u")}
    for N in range(Nmin, Nmax):
        ch_a, ch_b = noise.chaos(N + 1), noise.chaos(N)
        dch = np.zeros(count)
        dps = np.zeros(count)
        for n in range(N + 1):
            dch = np.maximum(dch, float(L) ** (-2.0 * kappa_s * n)
                             * level_sup(ch_a[n] - ch_b[n], d))
            dps = np.maximum(dps, float(L) ** (-3.0 * kappa_s * n)
                             * level_sup(flows[N + 1].psi[n] - flows[N].psi[n], d))
        out["chaos"].append(dch)
        out["psi"].append(dps)
        out["v"].append(holder_distance(sols[N + 1].v, sols[N].v, kappa_v, L, d))
        ua = reconstruct_u(sols[N + 1], kappa_v).u
        ub = refine(reconstruct_u(sols[N], kappa_v).u, L, d)
        out["u"].append(besov_norm(ua - ub, 1.0 - kappa_v, L, d))
    res = {k: np.stack(v, axis=-1) for k, v in out.items()}
    res["consistency"] = np.max(np.stack(consist, axis=-1), axis=-1)
    return res


def convergence_study(L: int, d: int, Nmax: int, g: float, r: float,
                      samples: int, seed: int, kappa_s: float = KAPPA_S_DEFAULT,
                      Nmin: int = 2, workers: int = 1,
                      max_draws: int | None = None) -> ConvergenceReport:
    """Cauchy-type distances between cutoffs ``N`` and ``N + 1`` on the good event.

    Draws samples in index order until ``samples`` of them lie in the good
    event for ``g`` (rejections are counted). For each usable sample and
    ``N = Nmin .. Nmax - 1`` it measures

    - ``chaos``: ``max_n L**(-2 kappa_s n) max|chaos^(N+1)_n - chaos^(N)_n|``
    - ``psi``: ``max_n L**(-3 kappa_s n) max|psi^(N+1)_n - psi^(N)_n|``
    - ``v``: :func:`holder_distance` with ``kappa = 3 kappa_s + 0.01``
    - ``u``: ``C^(1 - kappa)`` norm of ``u_(N+1) - u_N`` (``u_N`` extended
      constantly onto the finer cells).
    """
    if Nmax - Nmin < 2:
        raise ValueError("need at least two cutoff pairs to fit a rate")
    max_draws = 20 * samples if max_draws is None else max_draws
    idx, drawn = _collect_omega(L, d, Nmax, g, kappa_s, samples, seed,
                                workers, max_draws)
    if len(idx) < 10:
        raise InsufficientDataError(f"only {len(idx)} usable samples")
    fn = partial(_convergence_chunk, L=L, d=d, Nmax=Nmax, Nmin=Nmin, g=g, r=r,
                 kappa_s=kappa_s, seed=seed)
    out = _gather(fn, idx, chunk_size(L ** (Nmax * d)), workers)
    Ns = np.arange(Nmin, Nmax)
    dist, rates = {}, {}
    for k in ("chaos", "psi", "v", "u"):
        dist[k] = out[k].mean(axis=0)
        rates[k] = fit_line(Ns, np.log(dist[k]))[0]
    return ConvergenceReport(Ns, dist, rates, out,
                             float(out["consistency"].max()), len(idx),
                             drawn - len(idx), drawn, seed, kappa_s)


@dataclass
class AblationReport:
    """Level-0 effective potential with and without the mass counterterm.

    ``bare[s, j]`` and ``renormalised[s, j]`` hold the solver's level-0
    potential of sample ``s`` at cutoff ``N[j]``. Slopes are least-squares
    fits of the per-cutoff sample means against ``N``; ``trend_pvalue`` is
    the p-value of that regression for the renormalised runs.

    ``paired_pvalue`` is a sharper diagnostic: a one-sample t-test on
    per-sample slopes. Because all cutoffs share one noise base it also
    resolves the geometrically vanishing approach of the mean to its
    limit, which is not a drift.
    """

    N: np.ndarray
    bare: np.ndarray
    renormalised: np.ndarray
    bare_slope: float
    expected_slope: float
    renormalised_slope: float
    trend_pvalue: float
    paired_pvalue: float
    dropped: int
    seed: int


def _ablation_chunk(start, count, L, d, Ns, g, r, seed):
    noise = EnhancedNoise.sample(NoiseConfig(seed, max(Ns), L, d), count, start)
    c = Couplings(g, r)
    bare = np.full((count, len(Ns)), np.nan)
    ren = np.full((count, len(Ns)), np.nan)
    for j, N in enumerate(Ns):
        for ct, dest in ((False, bare), (True, ren)):
            try:
                dest[:, j] = rg_solve(BareProblem(noise, c, N, ct)).rho[0].reshape(count)
            except LargeFieldSingularity:
                for s in range(count):
                    one = noise.select(slice(s, s + 1))
                    try:
                        dest[s, j] = rg_solve(BareProblem(one, c, N, ct)).rho[0].item()
                    except LargeFieldSingularity:
                        pass
    return {"bare": bare, "ren": ren}


def ablate_counterterm(L: int, d: int, N_range, g: float, r: float,
                       samples: int, seed: int,
                       workers: int = 1) -> AblationReport:
    """Drift of the level-0 potential in ``N`` when the counterterm is removed."""
    Ns = [int(N) for N in N_range]
    fn = partial(_ablation_chunk, L=L, d=d, Ns=Ns, g=g, r=r, seed=seed)
    out = map_samples(fn, samples, chunk=chunk_size(L ** (max(Ns) * d)),
                      workers=workers)
    ok = np.all(np.isfinite(out["bare"]) & np.isfinite(out["ren"]), axis=1)
    bare, ren = out["bare"][ok], out["ren"][ok]
    if len(bare) < 10:
        raise InsufficientDataError(f"only {len(bare)} usable samples")
    x = np.asarray(Ns, dtype=float)
    bslope = fit_line(x, bare.mean(axis=0))[0]
    reg = stats.linregress(x, ren.mean(axis=0))
    xc = x - x.mean()
    per = (ren - ren.mean(axis=1, keepdims=True)) @ xc / (xc @ xc)
    paired = float(stats.ttest_1samp(per, 0.0).pvalue)
    expected = (1.0 - float(L) ** -d) * g ** 2
    return AblationReport(x, bare, ren, bslope, expected, float(reg.slope),
                          float(reg.pvalue), paired, int((~ok).sum()), seed)


@dataclass
class BoundReport:
    """Per-sample checks of the a-priori bounds on the good event.

    ``checks[name]`` is a boolean array over usable samples.
    """

    L: int
    N: int
    g: float
    kappa_s: float
    checks: dict
    usable: int
    rejected: int

    @property
    def all_ok(self) -> np.ndarray:
        return np.all(np.stack(list(self.checks.values())), axis=0)

    @property
    def violation_rate(self) -> float:
        return float(1.0 - self.all_ok.mean())


def _bounds_chunk(start, count, L, d, N, g, r, kappa_s, seed):
    noise = EnhancedNoise.sample(NoiseConfig(seed, N, L, d), count, start)
    c = Couplings(g, r)
    a = alpha_of(d)
    fl = run_flow(noise, c, N)
    sol = rg_solve(BareProblem(noise, c, N))
    xi, ch = noise.xi, noise.chaos(N)
    psi_w = np.zeros(count)
    r_ok = np.ones(count, dtype=bool)
    q_ok = np.ones(count, dtype=bool)
    p_ok = np.ones(count, dtype=bool)
    for n in range(N + 1):
        psi_w = np.maximum(psi_w, float(L) ** (-3.0 * kappa_s * n)
                           * level_sup(fl.psi[n], d))
    for n in range(1, N + 1):
        tri = stochastic_norm(xi, ch, kappa_s, L, d, from_level=n)
        lim = 16.0 * float(L) ** (2.0 * kappa_s * n) / g * tri
        r_ok &= level_sup(fl.remainder[n], d) <= lim
        v = sol.v[n]
        q_ok &= level_sup(coarsen(v, L, d), d) <= (8.0 * float(L) ** a) ** n
        p_ok &= level_sup(fluct(v, L, d), d) <= (32.0 * float(L) ** kappa_s) ** n
    return {
        "psi": psi_w <= (2.0 * g) ** -3.0,
        "remainder": r_ok,
        "v0": np.abs(sol.v[0].reshape(count)) <= 8.0,
        "coarse_growth": q_ok,
        "fluct_growth": p_ok,
    }


def monitor_bounds(L: int, d: int, N: int, g: float, r: float, samples: int,
                   seed: int, kappa_s: float = KAPPA_S_DEFAULT,
                   workers: int = 1,
                   max_draws: int | None = None) -> BoundReport:
    """Check the cubic-remainder, remainder and solution bounds on good samples.

    - ``psi``: ``max_n L**(-3 kappa_s n) max|psi_n| <= (2 g)**-3``
    - ``remainder``: ``max|R_n| <= 16 L**(2 kappa_s n) g**-1 |||xi, chaos|||_n``
      where ``|||.|||_n`` is the stochastic norm restricted to levels ``>= n``
    - ``v0``: ``|v_0| <= 8``
    - ``coarse_growth``: ``max|coarsen v_n| <= (8 L**alpha)**n``
    - ``fluct_growth``: ``max|P1 v_n| <= (32 L**kappa_s)**n``
    """
    max_draws = 20 * samples if max_draws is None else max_draws
    idx, drawn = _collect_omega(L, d, N, g, kappa_s, samples, seed, workers,
                                max_draws)
    if not idx:
        raise InsufficientDataError("no samples in the good event")
    fn = partial(_bounds_chunk, L=L, d=d, N=N, g=g, r=r, kappa_s=kappa_s,
                 seed=seed)
    out = _gather(fn, idx, chunk_size(L ** (N * d)), workers)
    return BoundReport(L, N, g, kappa_s, out, len(idx), drawn - len(idx))
