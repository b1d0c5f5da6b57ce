"""Monte Carlo statistics, exponent fits, transport costs, reference laws.

Everything here is deterministic given its inputs (sampling helpers take
explicit seeds).  Closed forms carry their derivation in the docstring; each
one is cross-checked against an independent quadrature or brute-force oracle
in the test suite before anything downstream is allowed to trust it.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import ndtr, ndtri

from heiscouple import group as grp
from heiscouple.simulate import philox_stream


@dataclass
class MomentEstimate:
    time: float
    p: float
    estimate: float
    stderr: float
    n_paths: int


@dataclass
class PowerLawFit:
    exponent: float
    intercept: float       # log-prefactor: log E ~ intercept + exponent * log t
    r_squared: float
    window: tuple


def jackknife_stderr(values):
    """Delete-one jackknife stderr of the sample mean.

    For the plain mean this collapses to the classical sqrt(S^2/n); kept as
    an explicit function so every estimate states its error convention.
    """
    x = np.asarray(values, dtype=float)
    n = x.size
    if n < 2:
        return float("nan")
    return float(np.sqrt(((x - x.mean()) ** 2).sum() / (n * (n - 1))))


_METRICS = ("r", "abs_z", "d_h")


def estimate_moment(ensemble, p, metric="d_h"):
    """Per-checkpoint estimates of E[metric^p] over a PathEnsemble.

    Args:
        ensemble: PathEnsemble with checkpoint arrays.
        p: moment order, p > 0 (p = 0 returns exact 1s).
        metric: "r" (horizontal separation R), "abs_z" (|Z|), or "d_h".

    Returns:
        list of MomentEstimate, one per checkpoint time.
    """
    if p < 0:
        raise ValueError("moment order must be >= 0")
    if metric not in _METRICS:
        raise ValueError(f"metric must be one of {_METRICS}")
    if ensemble.n_paths == 0:
        raise ValueError("empty ensemble")
    if metric == "r":
        vals = np.sqrt(ensemble.r2)
    elif metric == "abs_z":
        vals = np.abs(ensemble.z)
    else:
        vals = ensemble.d_h()
    out = []
    for i, t in enumerate(ensemble.times):
        v = vals[i] ** p if p != 0 else np.ones(ensemble.n_paths)
        out.append(
            MomentEstimate(
                time=float(t),
                p=float(p),
                estimate=float(v.mean()),
                stderr=jackknife_stderr(v),
                n_paths=ensemble.n_paths,
            )
        )
    return out


def fit_power_law(estimates, window=None):
    """Least squares of log(estimate) on log(time).

    Args:
        estimates: list of MomentEstimate (times > 0 where used).
        window: optional (t_lo, t_hi) inclusive time window.

    Returns:
        PowerLawFit.  Raises if fewer than 3 usable points or nonpositive
        estimates inside the window.
    """
    pts = [
        (e.time, e.estimate)
        for e in estimates
        if e.time > 0 and (window is None or window[0] <= e.time <= window[1])
    ]
    if len(pts) < 3:
        raise ValueError("need at least 3 checkpoints in the fit window")
    t = np.array([q[0] for q in pts])
    y = np.array([q[1] for q in pts])
    if np.any(y <= 0):
        raise ValueError("nonpositive estimates in the fit window")
    lx, ly = np.log(t), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (intercept + slope * lx)
    ss_tot = ((ly - ly.mean()) ** 2).sum()
    r2 = 1.0 - float((resid**2).sum() / ss_tot) if ss_tot > 0 else 1.0
    lo = window[0] if window else float(t.min())
    hi = window[1] if window else float(t.max())
    return PowerLawFit(
        exponent=float(slope),
        intercept=float(intercept),
        r_squared=max(min(r2, 1.0), 0.0),
        window=(lo, hi),
    )


def compare_log_vs_power(times, values):
    """Residual comparison of y ~ a + b log t against y ~ A t^c.

    Both models are fitted by least squares (the power law on log-log axes)
    and compared by residual sum of squares in the original y space.  Used to
    recognise the logarithmic growth regime, where a fitted tiny power looks
    deceptively fine on log-log axes.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    lx = np.log(t)
    b, a = np.polyfit(lx, y, 1)
    rss_log = float(((y - (a + b * lx)) ** 2).sum())
    c, la = np.polyfit(lx, np.log(y), 1)
    rss_pow = float(((y - np.exp(la) * t**c) ** 2).sum())
    return {
        "rss_log": rss_log,
        "rss_power": rss_pow,
        "prefer_log": rss_log < rss_pow,
        "log_slope": float(b),
        "power_exponent": float(c),
    }


def empirical_wasserstein(samples1, samples2, p=1.0, metric=None, max_n=512):
    """Exact p-Wasserstein between two equal-size empirical measures.

    Cost (sum_i d(x_i, y_sigma(i))^p / n)^(1/p) minimised over permutations
    sigma by the Hungarian assignment solver; exact for every p > 0,
    including the concave range p < 1 where sorted matching is not optimal.

    Args:
        samples1, samples2: arrays (m,) of reals, or (m, 2n+1) of group
            points (then d is the group quasidistance unless `metric` given).
        p: cost exponent, p > 0.
        metric: optional callable metric(x_block, y_block) -> (m, m) costs.

    Returns:
        Nonnegative float.
    """
    x = np.asarray(samples1, dtype=float)
    y = np.asarray(samples2, dtype=float)
    if x.shape != y.shape:
        raise ValueError("sample arrays must have identical shapes")
    m = x.shape[0]
    if m > max_n:
        raise ValueError(f"exact assignment limited to {max_n} samples, got {m}")
    if p <= 0:
        raise ValueError("p must be positive")
    if metric is not None:
        dmat = metric(x, y)
    elif x.ndim == 1:
        dmat = np.abs(x[:, None] - y[None, :])
    else:
        dmat = grp.quasidistance(x[:, None, :], y[None, :, :])
    rows, cols = linear_sum_assignment(dmat**p)
    return float((dmat[rows, cols] ** p).mean() ** (1.0 / p))


def a_p_constant(p):
    """The interval normal moment a_p = E[|G| ; |G| <= q], q = ndtri((1+p)/2).

    Integrating |x| phi(x) over the symmetric interval gives the closed form
    sqrt(2/pi) (1 - exp(-q^2/2)).  Strictly increasing in p with limit
    E|G| = sqrt(2/pi) as p -> 1.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("a_p defined for p in (0, 1)")
    q = ndtri((1.0 + p) / 2.0)
    return math.sqrt(2.0 / math.pi) * (1.0 - math.exp(-q * q / 2.0))


def hitting_density(u, r0):
    """Density of the time reflection coupling merges the horizontal parts.

    R/2 is a standard BM started at r0/2 and absorbed at 0, so tau follows
    the level-hitting law (r0/2) / sqrt(2 pi u^3) exp(-r0^2 / (8u)).
    """
    if r0 <= 0:
        raise ValueError("r0 must be positive")
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise ValueError("density evaluated at nonpositive times")
    return (r0 / 2.0) / np.sqrt(2.0 * np.pi * u**3) * np.exp(-(r0**2) / (8.0 * u))


def hitting_cdf(t, r0):
    """P(tau <= t) = 2 (1 - Phi(r0 / (2 sqrt(t)))); vectorised in t."""
    if r0 <= 0:
        raise ValueError("r0 must be positive")
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t, dtype=float)
    pos = t > 0
    out[pos] = 2.0 * (1.0 - ndtr(r0 / (2.0 * np.sqrt(t[pos]))))
    return out if out.ndim else float(out)


def excursion_moment(p, n_samples=4096, m_steps=2048, seed=0):
    """E[(int_0^1 X_s^2 ds)^{p/2}] for a normalized Brownian excursion X.

    X is sampled as a 3-d Bessel bridge 0 -> 0 on [0,1]: the norm of three
    independent scalar Brownian bridges.  The integral uses the midpoint of
    left/right endpoint sums (trapezoid in X^2).

    Returns a MomentEstimate (time field is the unit horizon).
    """
    if p <= 0:
        raise ValueError("p must be positive")
    rng = philox_stream(seed, 0)
    vals = np.empty(n_samples)
    chunk = max(1, int(2**22 // m_steps))
    s = np.arange(1, m_steps) / m_steps
    done = 0
    while done < n_samples:
        k = min(chunk, n_samples - done)
        # three independent bridges via increments (interior points only)
        dw = rng.standard_normal((k, 3, m_steps)) / math.sqrt(m_steps)
        w = np.cumsum(dw, axis=-1)
        br = w[..., :-1] - s * w[..., -1:]
        x2 = (br**2).sum(axis=1)  # squared norm at interior grid points
        # trapezoid with X(0) = X(1) = 0
        vals[done : done + k] = x2.sum(axis=-1) / m_steps
        done += k
    v = vals ** (p / 2.0)
    return MomentEstimate(
        time=1.0,
        p=float(p),
        estimate=float(v.mean()),
        stderr=jackknife_stderr(v),
        n_paths=n_samples,
    )


def excursion_moment_rejection(p, n_samples=2048, m_steps=256, seed=0):
    """Oracle for excursion_moment: rejection-sample positive bridges.

    A scalar Brownian bridge conditioned to stay positive at the interior
    grid points is (discretely) a Brownian excursion.  By the cycle lemma the
    acceptance probability is exactly 1/m_steps per proposal, so proposals
    are batched m_steps at a time.  Same discretization bias class as the
    Bessel-bridge route only if compared at the same m_steps -- callers
    should match them.
    """
    if p <= 0:
        raise ValueError("p must be positive")
    rng = philox_stream(seed, 1)
    s = np.arange(1, m_steps) / m_steps
    out = np.empty(n_samples)
    got = 0
    while got < n_samples:
        k = 4 * m_steps * max(1, (n_samples - got) // 4 + 1)
        k = min(k, 2**22 // m_steps + m_steps)
        dw = rng.standard_normal((k, m_steps)) / math.sqrt(m_steps)
        w = np.cumsum(dw, axis=-1)
        br = w[:, :-1] - s * w[:, -1:]
        keep = np.all(br > 0.0, axis=-1)
        x2 = br[keep] ** 2
        take = min(x2.shape[0], n_samples - got)
        out[got : got + take] = x2[:take].sum(axis=-1) / m_steps
        got += take
    v = out ** (p / 2.0)
    return MomentEstimate(
        time=1.0,
        p=float(p),
        estimate=float(v.mean()),
        stderr=jackknife_stderr(v),
        n_paths=n_samples,
    )


@dataclass
class MartingaleBoundCheck:
    ok: bool
    premise_ok: bool
    estimate: float
    stderr: float
    bound: float
    p_hat: float


def martingale_lower_bound_check(terminal, quad_var, beta, p):
    """Check E|N_h| >= a_p sqrt(beta) on empirical martingale data.

    Args:
        terminal: samples of N_h.
        quad_var: matching samples of <N>_h.
        beta: variance threshold.
        p: required lower bound on P(<N>_h >= beta).

    Returns:
        MartingaleBoundCheck; `premise_ok` reports whether the empirical
        P(<N>_h >= beta) reaches p (a failed premise is reported, not
        raised), and `ok` whether the bound holds within 3 stderr.
    """
    nh = np.abs(np.asarray(terminal, dtype=float))
    qv = np.asarray(quad_var, dtype=float)
    if nh.shape != qv.shape:
        raise ValueError("terminal and quadratic-variation samples must align")
    p_hat = float((qv >= beta).mean())
    premise_ok = p_hat >= p
    est = float(nh.mean())
    se = jackknife_stderr(nh)
    bound = a_p_constant(p) * math.sqrt(beta) if beta > 0 else 0.0
    ok = est >= bound - 3.0 * se
    return MartingaleBoundCheck(
        ok=bool(ok),
        premise_ok=bool(premise_ok),
        estimate=est,
        stderr=se,
        bound=float(bound),
        p_hat=p_hat,
    )
