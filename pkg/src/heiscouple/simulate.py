"""Euler schemes for coupled horizontal Brownian motions on H^n.

Two schemes over the same driving noise model:

* full scheme -- evolves both legs in group coordinates (B, A) and (B', A');
  the second leg consumes J dW + Jhat dWtilde.  Vertical coordinates use
  left-endpoint increments dA = (1/2) omega(B, dB).

* reduced scheme -- evolves only the dilation-reduced pair (R^2, Z):

      dR^2 = 2 R sqrt(2 (1 - K11)) dC + 2 tr(I - K) dt
      dZ   = (R/2) sqrt(2 (1 + K22)) dCt + (1/2) sum_i (K[yi,xi]-K[xi,yi]) dt
      d<C, Ct> = rho dt,  rho = (K21 - K12) / sqrt(4 (1-K11)(1+K22))

  with K the coupling matrix in the moving frame (e1, e2 = M e1).

Boundary behaviour at R = 0 is policy-dependent and identical in both
schemes:

* reflection policy: R/2 is a standard Brownian motion; a step from R_k to
  R_{k+1} is declared to have hit 0 with the exact Brownian-bridge crossing
  probability exp(-R_k R_{k+1} / (2 dt)); after absorption the pair is merged
  horizontally and Z stays frozen (the policy latches to synchronous).

* kendall policy, reflection regime: no absorbed latch exists, so the radial
  part uses the reflected exact update R_{k+1} = |R_k + 2 sqrt(dt) g|; if the
  hysteresis later re-enters the synchronous region the regime switch does
  the freezing.

Both engines consume noise in a fixed order with counter-based per-block
streams, so results are bitwise reproducible for a given (seed, n_paths)
regardless of thread count.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from heiscouple import coupling as cpl
from heiscouple import group as grp
from heiscouple.constants import (
    CLAMP_TOL,
    DEFAULT_DT,
    RNG_BLOCK,
)


def philox_stream(seed, block):
    """Counter-based stream keyed by (seed, block index)."""
    key = np.array([np.uint64(seed), np.uint64(block)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _blocks(n_paths, block=RNG_BLOCK):
    for b in range(0, (n_paths + block - 1) // block):
        lo = b * block
        yield b, lo, min(lo + block, n_paths)


def relative_coordinates(b, bprime, vert, vert_p):
    """(R^2, Z) of the left quotient: Z = A - A' + (1/2) omega(B, B')."""
    b = np.asarray(b, dtype=float)
    bprime = np.asarray(bprime, dtype=float)
    d = b - bprime
    r2 = (d**2).sum(axis=-1)
    z = (
        np.asarray(vert, dtype=float)
        - np.asarray(vert_p, dtype=float)
        + 0.5 * grp.symplectic(b, bprime)
    )
    return r2, z


@dataclass
class CouplingState:
    """Instantaneous state of one coupled pair in group coordinates."""

    b: np.ndarray        # horizontal part of the first leg, shape (2n,)
    bprime: np.ndarray   # horizontal part of the second leg
    vert: float          # vertical coordinate of the first leg
    vert_p: float        # vertical coordinate of the second leg
    t: float = 0.0

    @classmethod
    def from_points(cls, a, aprime, t=0.0):
        a = np.asarray(a, dtype=float)
        aprime = np.asarray(aprime, dtype=float)
        return cls(
            b=a[:-1].copy(),
            bprime=aprime[:-1].copy(),
            vert=float(a[-1]),
            vert_p=float(aprime[-1]),
            t=float(t),
        )

    def points(self):
        left = np.concatenate([self.b, [self.vert]])
        right = np.concatenate([self.bprime, [self.vert_p]])
        return left, right

    @property
    def r2(self):
        return float(((self.b - self.bprime) ** 2).sum())

    @property
    def z(self):
        return float(relative_coordinates(self.b, self.bprime, self.vert, self.vert_p)[1])

    @property
    def d_h(self):
        return math.sqrt(self.r2 + abs(self.z))


def step_full(state, J, dt, dw, dwt=None, jhat=None):
    """One Euler step of the full scheme for a single pair.

    Args:
        state: CouplingState.
        J: canonical-basis coupling matrix (2n, 2n).
        dt: step size.
        dw: increment of the driving BM, shape (2n,), variance dt per axis.
        dwt: independent increment for the defect noise (needed iff jhat is).
        jhat: optional precomputed sqrt(I - J J^T).

    Returns:
        A new CouplingState advanced by dt.  No boundary logic here -- this
        is the bare scheme step; engines add absorption on top.
    """
    J = np.asarray(J, dtype=float)
    dw = np.asarray(dw, dtype=float)
    db = dw
    dbp = J @ dw
    if jhat is not None:
        dbp = dbp + np.asarray(jhat, dtype=float) @ np.asarray(dwt, dtype=float)
    vert = state.vert + 0.5 * grp.symplectic(state.b, db)
    vert_p = state.vert_p + 0.5 * grp.symplectic(state.bprime, dbp)
    return CouplingState(
        b=state.b + db,
        bprime=state.bprime + dbp,
        vert=float(vert),
        vert_p=float(vert_p),
        t=state.t + dt,
    )


def step_reduced(r2, z, K, dt, g1, g2):
    """One Euler step of the reduced scheme for a single pair.

    g1, g2 are independent standard normals; the correlation rho between the
    two driving BMs is realised as dCt = rho g1 + sqrt(1-rho^2) g2.  Negative
    R^2 proposals are clamped to zero.  Returns (r2', z').
    """
    co = cpl.reduced_coefficients(np.asarray(K, dtype=float))
    r = math.sqrt(max(float(r2), 0.0))
    sdt = math.sqrt(dt)
    dc = sdt * g1
    rho = float(co["rho"])
    dct = sdt * (rho * g1 + math.sqrt(max(1.0 - rho**2, 0.0)) * g2)
    r2n = float(r2) + 2.0 * r * math.sqrt(float(co["var_r"])) * dc + float(co["drift_r"]) * dt
    zn = float(z) + 0.5 * r * math.sqrt(float(co["var_z"])) * dct + float(co["drift_z"]) * dt
    return max(r2n, 0.0), zn


@dataclass
class PathEnsemble:
    """Checkpointed ensemble produced by the simulation engines.

    Arrays are shaped (n_checkpoints, n_paths); `absorbed_at` is per-path
    (NaN when the path never merged).  `v` is the accumulated drift
    variation (1/2) int |sum_i (K[yi,xi]-K[xi,yi])| ds and `qv` the vertical
    quadratic variation int R^2 (1 + K22) / 2 ds.
    """

    times: np.ndarray
    r2: np.ndarray
    z: np.ndarray
    v: np.ndarray
    qv: np.ndarray
    drift_int: np.ndarray
    absorbed_at: np.ndarray
    meta: dict = field(default_factory=dict)

    def d_h(self):
        """Quasidistance sqrt(R^2 + |Z|) at every checkpoint."""
        return np.sqrt(self.r2 + np.abs(self.z))

    @property
    def n_paths(self):
        return self.r2.shape[1]

    def to_csv(self, path, header_note="", max_paths=None):
        """Write the long-format ensemble table.

        First line is a `#` comment (timestamp/notes -- excluded from
        reproducibility comparisons); the body is deterministic.  With
        `max_paths` set, only the first that many paths are written (keeps
        large-ensemble artifacts bounded without changing what is written
        for any path that does appear).
        """
        nt, m = self.r2.shape
        if max_paths is not None:
            m = min(m, int(max_paths))
        tcol = np.repeat(self.times, m)
        pid = np.tile(np.arange(m), nt)
        body = np.column_stack(
            [
                tcol,
                pid,
                self.r2[:, :m].ravel(),
                self.z[:, :m].ravel(),
                self.v[:, :m].ravel(),
                self.qv[:, :m].ravel(),
            ]
        )
        with open(path, "w") as fh:
            fh.write(f"# {header_note}\n")
            fh.write("checkpoint_time,path_id,R2,Z,V,QV\n")
            np.savetxt(fh, body, fmt="%.17g", delimiter=",")


def default_checkpoints(T, dt):
    """Dyadic grid {T 2^-k} down to the step scale, plus {0, T}."""
    ts = [0.0, float(T)]
    t = float(T) / 2.0
    while t >= max(dt, T * 2.0**-12):
        ts.append(t)
        t /= 2.0
    return sorted(set(ts))


def _checkpoint_steps(checkpoints, dt, n_steps):
    idx = sorted({min(int(round(t / dt)), n_steps) for t in checkpoints})
    return np.array(idx, dtype=np.int64)


# ---------------------------------------------------------------------------
# vectorised per-block engines
# ---------------------------------------------------------------------------

_K22_BY_REGIME = {  # frame-basis K22 per regime (builtin policies)
    cpl.REGIME_REFLECT: 1.0,
    cpl.REGIME_SYNC: 1.0,
    cpl.REGIME_PERVERSE: -1.0,
}
_DRIFT_R_BY_REGIME = {  # 2 tr(I - K)
    cpl.REGIME_REFLECT: 4.0,
    cpl.REGIME_SYNC: 0.0,
    cpl.REGIME_PERVERSE: 4.0,
}


def _regime_tables(policy, n):
    """Per-regime scalar coefficient lookups, indexable by regime code."""
    k22 = np.zeros(4)
    drift_r = np.zeros(4)
    for code, val in _K22_BY_REGIME.items():
        k22[code] = val
        drift_r[code] = _DRIFT_R_BY_REGIME[code]
    if policy.kind == "custom":
        co = cpl.reduced_coefficients(policy.matrix)
        k22[cpl.REGIME_CUSTOM] = float(policy.matrix[n, n])
        drift_r[cpl.REGIME_CUSTOM] = float(co["drift_r"])
    return k22, drift_r


def _run_reduced_block(policy, n, r2_0, z_0, n_steps, dt, ck_steps, seed, block, m):
    rng = philox_stream(seed, block)
    r2 = np.full(m, float(r2_0))
    z = np.full(m, float(z_0))
    regime = policy.initial_regime(r2, z)
    absorbed_at = np.full(m, np.nan)
    v_acc = np.zeros(m)
    qv_acc = np.zeros(m)
    dr_acc = np.zeros(m)
    clamps = 0

    k22_tab, driftr_tab = _regime_tables(policy, n)
    if policy.kind == "custom":
        co = cpl.reduced_coefficients(policy.matrix)
        c_var_r = float(co["var_r"])
        c_var_z = float(co["var_z"])
        c_rho = float(co["rho"])
        c_drift_z = float(co["drift_z"])
    use_bridge = policy.kind == "reflection"

    out = {k: np.empty((len(ck_steps), m)) for k in ("r2", "z", "v", "qv", "dr")}
    ck_pos = {s: i for i, s in enumerate(ck_steps)}
    sdt = math.sqrt(dt)

    def record(step):
        i = ck_pos.get(step)
        if i is not None:
            out["r2"][i] = r2
            out["z"][i] = z
            out["v"][i] = v_acc
            out["qv"][i] = qv_acc
            out["dr"][i] = dr_acc

    record(0)
    for k in range(1, n_steps + 1):
        regime = policy.next_regime(r2, z, regime)
        g1 = rng.standard_normal(m)
        g2 = rng.standard_normal(m)
        if use_bridge:
            u = rng.random(m)

        r = np.sqrt(r2)
        k22 = k22_tab[regime]
        # vertical update first (left-endpoint R), shared by every regime
        if policy.kind == "custom":
            dct = c_rho * g1 + math.sqrt(max(1.0 - c_rho**2, 0.0)) * g2
            z = z + 0.5 * r * math.sqrt(c_var_z) * sdt * dct + c_drift_z * dt
            v_acc += abs(c_drift_z) * dt
        else:
            # builtin K are diagonal: rho = 0, drift_z = 0, var_z = 2(1+k22)
            z = z + 0.5 * r * np.sqrt(2.0 * (1.0 + k22)) * sdt * g2
        qv_acc += r2 * (1.0 + k22) / 2.0 * dt
        dr_acc += driftr_tab[regime] * dt

        refl = regime == cpl.REGIME_REFLECT
        perv = regime == cpl.REGIME_PERVERSE
        if np.any(refl):
            rn = r + 2.0 * sdt * g1  # R/2 is a standard BM in this regime
            if use_bridge:
                cross = rn <= 0.0
                pos = refl & ~cross
                with np.errstate(over="ignore"):
                    pcross = np.exp(-np.clip(r * rn / (2.0 * dt), 0.0, 700.0))
                cross |= u < np.where(pos, pcross, 0.0)
                hit = refl & cross
                r2 = np.where(refl, np.where(hit, 0.0, rn**2), r2)
                absorbed_at[hit & np.isnan(absorbed_at)] = (k - 0.5) * dt
            else:
                # kendall: reflected exact update, no absorbed latch
                r2 = np.where(refl, np.abs(rn) ** 2, r2)
        if policy.kind == "custom":
            cust = regime == cpl.REGIME_CUSTOM
            if np.any(cust):
                prop = (
                    r2
                    + 2.0 * r * math.sqrt(c_var_r) * sdt * g1
                    + driftr_tab[cpl.REGIME_CUSTOM] * dt
                )
                neg = cust & (prop < -CLAMP_TOL * max(float(r2_0), 1.0))
                clamps += int(neg.sum())
                r2 = np.where(cust, np.clip(prop, 0.0, None), r2)
        if np.any(perv):
            r2 = np.where(perv, r2 + 4.0 * dt, r2)
        # synchronous paths keep r2 as-is
        record(k)

    return {
        "r2": out["r2"],
        "z": out["z"],
        "v": out["v"],
        "qv": out["qv"],
        "dr": out["dr"],
        "absorbed_at": absorbed_at,
        "clamps": clamps,
        "steps": n_steps * m,
    }


def _run_full_block(policy, n, b0, bp0, v0, vp0, n_steps, dt, ck_steps, seed, block, m):
    """Full-scheme engine.

    Plain Euler in group coordinates, plus exact enforcement of the two
    invariants the continuous dynamics make deterministic (so the reduced
    scheme's point masses are matched rather than smeared by roundoff or
    O(dt) discretisation artifacts):

    * synchronous regime: D = B - B' is constant; B' is rebuilt as B - D.
    * perverse regime: |D|^2 grows by exactly 4 dt (the Ito correction
      cancels the radial component) and Z is constant; the Euler proposal
      for D is projected back to the exact radius and the second vertical
      coordinate is rebuilt to keep Z at its starting value.

    Reflection and custom regimes are left genuinely stochastic.
    """
    rng = philox_stream(seed, block)
    b = np.tile(np.asarray(b0, dtype=float), (m, 1))
    bp = np.tile(np.asarray(bp0, dtype=float), (m, 1))
    vert = np.full(m, float(v0))
    vert_p = np.full(m, float(vp0))
    r2, z = relative_coordinates(b, bp, vert, vert_p)
    regime = policy.initial_regime(r2, z)
    absorbed_at = np.full(m, np.nan)
    v_acc = np.zeros(m)
    qv_acc = np.zeros(m)
    dr_acc = np.zeros(m)
    clamps = 0

    k22_tab, driftr_tab = _regime_tables(policy, n)
    use_bridge = policy.kind == "reflection"
    if policy.kind == "custom":
        K = policy.matrix
        Khat = cpl.complete_jhat(K)
        need_defect = float(np.abs(Khat).max()) > 0.0
        c_drift_z = float(cpl.reduced_coefficients(K)["drift_z"])

    out = {k: np.empty((len(ck_steps), m)) for k in ("r2", "z", "v", "qv", "dr")}
    ck_pos = {s: i for i, s in enumerate(ck_steps)}
    sdt = math.sqrt(dt)

    def record(step):
        i = ck_pos.get(step)
        if i is not None:
            out["r2"][i] = r2
            out["z"][i] = z
            out["v"][i] = v_acc
            out["qv"][i] = qv_acc
            out["dr"][i] = dr_acc

    record(0)
    for k in range(1, n_steps + 1):
        regime = policy.next_regime(r2, z, regime)
        dw = sdt * rng.standard_normal((m, 2 * n))
        if policy.kind == "custom":
            dwt = sdt * rng.standard_normal((m, 2 * n))
        if use_bridge:
            u = rng.random(m)

        d = b - bp
        r = np.sqrt(r2)
        safe_r = np.where(r > 0.0, r, 1.0)
        e1 = d / safe_r[..., None]
        e2 = cpl.apply_complex_structure(e1)

        dbp = dw.copy()  # synchronous default
        sync = regime == cpl.REGIME_SYNC
        refl = (regime == cpl.REGIME_REFLECT) & (r > 0.0)
        perv = regime == cpl.REGIME_PERVERSE
        if np.any(refl):
            comp = (e1 * dw).sum(axis=1)
            dbp = np.where(refl[:, None], dw - 2.0 * comp[:, None] * e1, dbp)
        if np.any(perv):
            comp2 = (e2 * dw).sum(axis=1)
            dbp = np.where(perv[:, None], dw - 2.0 * comp2[:, None] * e2, dbp)
        if policy.kind == "custom":
            cust = (regime == cpl.REGIME_CUSTOM) & (r > 0.0)
            if np.any(cust):
                Q = cpl._frame_from_unit(e1)
                w = np.einsum("mij,mj->mi", np.swapaxes(Q, -1, -2), dw)
                y = np.einsum("ij,mj->mi", K, w)
                if need_defect:
                    wt = np.einsum("mij,mj->mi", np.swapaxes(Q, -1, -2), dwt)
                    y = y + np.einsum("ij,mj->mi", Khat, wt)
                dbp = np.where(cust[:, None], np.einsum("mij,mj->mi", Q, y), dbp)

        # diagnostics use left-endpoint R^2 and the regime's K
        k22 = k22_tab[regime]
        qv_acc += r2 * (1.0 + k22) / 2.0 * dt
        dr_acc += driftr_tab[regime] * dt
        if policy.kind == "custom":
            v_acc += np.where(regime == cpl.REGIME_CUSTOM, abs(c_drift_z) * dt, 0.0)

        vert = vert + 0.5 * grp.symplectic(b, dw)
        vert_p = vert_p + 0.5 * grp.symplectic(bp, dbp)
        b = b + dw
        bp = bp + dbp

        if np.any(sync):
            # keep D bitwise constant (same Euler map, rounding-stable form)
            bp = np.where(sync[:, None], b - d, bp)
        if np.any(perv):
            dtil = b - bp
            nrm2 = (dtil**2).sum(axis=1)
            tgt = r2 + 4.0 * dt
            scale = np.sqrt(tgt / np.where(nrm2 > 0.0, nrm2, 1.0))
            bp = np.where(perv[:, None], b - dtil * scale[:, None], bp)
            vert_p = np.where(
                perv, vert + 0.5 * grp.symplectic(b, bp) - z, vert_p
            )

        rr, zz = relative_coordinates(b, bp, vert, vert_p)
        r2 = np.where(perv, r2 + 4.0 * dt, np.where(sync, r2, rr))
        z = np.where(perv, z, zz)

        if use_bridge and np.any(refl):
            # radial walk is exactly linear under reflection; apply the
            # bridge-crossing absorption so R/2 is a true absorbed BM
            comp = (e1 * dw).sum(axis=1)
            rn = r + 2.0 * comp
            cross = rn <= 0.0
            with np.errstate(over="ignore"):
                pcross = np.exp(-np.clip(r * rn / (2.0 * dt), 0.0, 700.0))
            cross |= u < np.where(cross, 0.0, pcross)
            hit = refl & cross
            if np.any(hit):
                bp = np.where(hit[:, None], b, bp)
                vert_p = np.where(hit, vert - z, vert_p)
                r2 = np.where(hit, 0.0, r2)
                absorbed_at[hit & np.isnan(absorbed_at)] = (k - 0.5) * dt
        record(k)

    return {
        "r2": out["r2"],
        "z": out["z"],
        "v": out["v"],
        "qv": out["qv"],
        "dr": out["dr"],
        "absorbed_at": absorbed_at,
        "clamps": clamps,
        "steps": n_steps * m,
    }


def simulate_ensemble(
    policy,
    a,
    aprime,
    T,
    n_paths,
    dt=DEFAULT_DT,
    seed=0,
    scheme="full",
    checkpoints=None,
    threads=1,
):
    """Simulate a coupled ensemble and record it at checkpoint times.

    Args:
        policy: CouplingPolicy.
        a, aprime: starting group points, arrays of length 2n + 1.
        T: horizon.
        n_paths: ensemble size.
        dt: Euler step.
        seed: base seed; path block j uses the stream keyed (seed, j).
        scheme: "full" (group coordinates) or "reduced" ((R^2, Z) only).
        checkpoints: recording times (snapped to the step grid); default is
            the dyadic grid of `default_checkpoints`.
        threads: worker threads over path blocks; does not affect output.

    Returns:
        PathEnsemble.
    """
    a = np.asarray(a, dtype=float)
    aprime = np.asarray(aprime, dtype=float)
    n = grp.npairs(a)
    if scheme not in ("full", "reduced"):
        raise ValueError(f"unknown scheme {scheme!r}")
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError("T must be an integer multiple of dt")
    if checkpoints is None:
        checkpoints = default_checkpoints(T, dt)
    ck_steps = _checkpoint_steps(checkpoints, dt, n_steps)

    r2_0, z_0 = relative_coordinates(a[:-1], aprime[:-1], a[-1], aprime[-1])

    def run(block, lo, hi):
        m = hi - lo
        if scheme == "reduced":
            return _run_reduced_block(
                policy, n, r2_0, z_0, n_steps, dt, ck_steps, seed, block, m
            )
        return _run_full_block(
            policy, n, a[:-1], aprime[:-1], a[-1], aprime[-1],
            n_steps, dt, ck_steps, seed, block, m,
        )

    blocks = list(_blocks(n_paths))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(lambda t: run(*t), blocks))
    else:
        results = [run(*t) for t in blocks]

    cat = {k: np.concatenate([r[k] for r in results], axis=-1)
           for k in ("r2", "z", "v", "qv", "dr", "absorbed_at")}
    clamps = sum(r["clamps"] for r in results)
    steps = sum(r["steps"] for r in results)
    return PathEnsemble(
        times=ck_steps * dt,
        r2=cat["r2"],
        z=cat["z"],
        v=cat["v"],
        qv=cat["qv"],
        drift_int=cat["dr"],
        absorbed_at=cat["absorbed_at"],
        meta={
            "policy": policy.kind,
            "scheme": scheme,
            "dt": dt,
            "seed": seed,
            "n": n,
            "n_paths": n_paths,
            "clamps": clamps,
            "steps": steps,
            "clamp_fraction": clamps / steps if steps else 0.0,
        },
    )


def simulate_reflection_exact(
    r0,
    T,
    n_paths,
    z0=0.0,
    seed=0,
    delta=1.0 / 64.0,
    t_first=1e-4,
    checkpoints=None,
    threads=1,
):
    """Reflection coupling without Euler bias in the radial part.

    Under reflection, R/2 is a standard BM absorbed at 0, so R is sampled
    exactly on a geometrically refined grid (relative spacing `delta`) with
    bridge-crossing absorption; the crossing time is recorded mid-step.  The
    vertical part integrates dZ = R dCt with a trapezoid rule for the
    conditional variance int R^2 ds over each cell.

    Returns a PathEnsemble whose absorbed_at carries the hitting times
    (NaN when R survives past T).
    """
    if checkpoints is None:
        checkpoints = default_checkpoints(T, max(t_first, T * 2.0**-12))
    grid = [0.0, t_first]
    while grid[-1] < T:
        grid.append(min(grid[-1] * (1.0 + delta), T))
    grid = np.array(sorted(set(grid) | {float(c) for c in checkpoints}))
    grid = grid[grid <= T]
    ck_idx = np.searchsorted(grid, np.asarray(sorted(set(checkpoints)), dtype=float))
    dts = np.diff(grid)

    def run(block, lo, hi):
        m = hi - lo
        rng = philox_stream(seed, block)
        r = np.full(m, float(r0))
        z = np.full(m, float(z0))
        tau = np.full(m, np.nan)
        out_r2 = np.empty((len(ck_idx), m))
        out_z = np.empty((len(ck_idx), m))
        out_qv = np.empty((len(ck_idx), m))
        qv = np.zeros(m)
        pos = {g: i for i, g in enumerate(ck_idx)}
        if 0 in pos:
            out_r2[pos[0]] = r**2
            out_z[pos[0]] = z
            out_qv[pos[0]] = qv
        for j, dtj in enumerate(dts):
            g = rng.standard_normal(m)
            u = rng.random(m)
            gz = rng.standard_normal(m)
            alive = np.isnan(tau)
            rn = r + 2.0 * math.sqrt(dtj) * g
            cross = rn <= 0.0
            with np.errstate(over="ignore"):
                pc = np.exp(-np.clip(r * rn / (2.0 * dtj), 0.0, 700.0))
            cross |= u < np.where(cross, 0.0, pc)
            hit = alive & cross
            rn = np.where(alive, np.where(hit, 0.0, rn), 0.0)
            var_z = (r**2 + rn**2) / 2.0 * dtj
            z = z + np.sqrt(var_z) * gz
            qv += var_z
            tau[hit] = grid[j] + dtj / 2.0
            r = rn
            i = pos.get(j + 1)
            if i is not None:
                out_r2[i] = r**2
                out_z[i] = z
                out_qv[i] = qv
        return {"r2": out_r2, "z": out_z, "qv": out_qv, "tau": tau}

    blocks = list(_blocks(n_paths))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(lambda t: run(*t), blocks))
    else:
        results = [run(*t) for t in blocks]
    r2 = np.concatenate([r["r2"] for r in results], axis=-1)
    z = np.concatenate([r["z"] for r in results], axis=-1)
    qv = np.concatenate([r["qv"] for r in results], axis=-1)
    tau = np.concatenate([r["tau"] for r in results])
    zeros = np.zeros_like(r2)
    return PathEnsemble(
        times=grid[ck_idx],
        r2=r2,
        z=z,
        v=zeros,
        qv=qv,
        drift_int=zeros,
        absorbed_at=tau,
        meta={
            "policy": "reflection",
            "scheme": "exact-radial",
            "seed": seed,
            "n": 1,
            "n_paths": n_paths,
            "delta": delta,
            "clamps": 0,
            "clamp_fraction": 0.0,
        },
    )


def kendall_success_times(
    policy,
    r2_0,
    z_0,
    t_max,
    n_paths,
    alpha=0.015,
    dt_cap=0.05,
    success_dh=1e-3,
    seed=0,
    max_iters=20_000_000,
):
    """First times the kendall-coupled pair contracts below a quasidistance.

    Exploits the phase structure of the hysteresis coupling.  In the
    synchronous regime R is frozen and Z is a driftless Brownian motion with
    variance rate R^2, so the whole phase is fast-forwarded by one exact
    first-passage draw (Levy: tau = d^2 / (R^2 g^2) for a standard normal g)
    to whichever level comes first -- the re-entry band |Z| = (kappa-eps)R^2/v8
    or the success set R^2 + |Z| = success_dh^2.  The reflection regime has no
    closed form and is stepped with dilation-adapted increments
    dt = min(alpha (R^2+|Z|), dt_cap), reflecting radial boundary.

    Success (R^2 + |Z| < success_dh^2) is absorbing at experiment level; the
    policy memory itself only tracks its regime.  Runs single-threaded on one
    noise stream: thread counts never affect the output.

    Returns an array of success times (NaN for paths still apart at t_max).
    """
    if policy.kind != "kendall":
        raise ValueError("adaptive contraction runner requires a kendall policy")
    if alpha <= 0 or dt_cap <= 0 or success_dh <= 0:
        raise ValueError("alpha, dt_cap and success_dh must be positive")
    tol2 = float(success_dh) ** 2
    band_in = (policy.kappa - policy.epsilon) / math.sqrt(8.0)
    rng = philox_stream(seed, 0)
    substeps = 4  # reflection substeps per dt refresh

    r2 = np.full(n_paths, float(r2_0))
    z = np.full(n_paths, float(z_0))
    t = np.zeros(n_paths)
    regime = policy.initial_regime(r2, z)
    success = np.full(n_paths, np.nan)
    won0 = r2 + np.abs(z) < tol2
    success[won0] = 0.0
    active = ~won0
    idx = np.arange(n_paths)
    iters = 0
    while np.any(active):
        iters += 1
        if iters > max_iters:
            raise RuntimeError("adaptive contraction run exceeded max_iters")
        act = idx[active]
        reg = regime[act]

        sy = act[reg == cpl.REGIME_SYNC]
        if sy.size:
            r2s, zs = r2[sy], z[sy]
            level = np.maximum(band_in * r2s, tol2 - r2s)
            dist = np.maximum(np.abs(zs) - level, 0.0)
            g = rng.standard_normal(sy.size)
            tau = dist**2 / np.maximum(r2s * g**2, 1e-300)
            t_new = t[sy] + tau
            out = t_new > t_max
            z[sy] = np.where(out, zs, np.sign(zs) * level)
            t[sy] = np.minimum(t_new, t_max)
            wins = ~out & (tol2 - r2s >= band_in * r2s)
            success[sy[wins]] = t_new[wins]
            active[sy[out | wins]] = False
            cont = ~out & ~wins
            regime[sy[cont]] = cpl.REGIME_REFLECT

        rf = act[reg == cpl.REGIME_REFLECT]
        if rf.size:
            r2r, zr, tr = r2[rf], z[rf], t[rf]
            remaining = np.maximum(t_max - tr, 0.0)
            dt = np.minimum(alpha * (r2r + np.abs(zr)), dt_cap)
            dt = np.minimum(dt, remaining / substeps)
            sdt = np.sqrt(dt)
            g = rng.standard_normal((rf.size, substeps, 2))
            r = np.sqrt(r2r)
            for k in range(substeps):
                zr = zr + r * sdt * g[:, k, 0]  # K22 = 1 in both regimes
                r = np.abs(r + 2.0 * sdt * g[:, k, 1])
            r2r = r * r
            tr = tr + substeps * dt
            r2[rf], z[rf], t[rf] = r2r, zr, tr
            won = r2r + np.abs(zr) < tol2
            success[rf[won]] = tr[won]
            regime[rf] = policy.next_regime(r2r, zr, regime[rf])
            # the 1e-9 guard stops denormal final steps from spinning forever
            active[rf] = ~won & (tr < t_max - 1e-9)
    return success
