"""Simulation engines: streams, steps, ensembles, and the exact runner."""

import math

import numpy as np
import pytest
from scipy.stats import kstest

from heiscouple import coupling as cpl
from heiscouple import estimators as est
from heiscouple import group as grp
from heiscouple import simulate as sim


def test_philox_stream_keying():
    a = sim.philox_stream(7, 0).standard_normal(8)
    b = sim.philox_stream(7, 0).standard_normal(8)
    c = sim.philox_stream(7, 1).standard_normal(8)
    d = sim.philox_stream(8, 0).standard_normal(8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_blocks_partition():
    spans = list(sim._blocks(2500, block=1024))
    assert spans == [(0, 0, 1024), (1, 1024, 2048), (2, 2048, 2500)]
    assert list(sim._blocks(4, block=1024)) == [(0, 0, 4)]


def test_relative_coordinates_match_group_quotient():
    rng = np.random.default_rng(0)
    for n in (1, 2):
        a = rng.standard_normal((64, 2 * n + 1))
        ap = rng.standard_normal((64, 2 * n + 1))
        r2, z = sim.relative_coordinates(a[:, :-1], ap[:, :-1], a[:, -1], ap[:, -1])
        quot = grp.mul(grp.inverse(ap), a)
        assert np.allclose(r2, (grp.horizontal(quot) ** 2).sum(axis=1), atol=1e-12)
        assert np.allclose(z, grp.vertical(quot), atol=1e-12)


def test_coupling_state_roundtrip():
    a = grp.point([1.0], [2.0], 3.0)
    ap = grp.point([0.0], [1.0], -1.0)
    st = sim.CouplingState.from_points(a, ap)
    left, right = st.points()
    assert np.array_equal(left, a) and np.array_equal(right, ap)
    assert st.r2 == 2.0
    # Z = A - A' + 0.5 omega(B, B') = 3 - (-1) + 0.5 (1*1 - 2*0) = 4.5
    assert st.z == 4.5
    assert st.d_h == math.sqrt(2.0 + 4.5)


def test_step_full_synchronous_keeps_difference():
    # the bare step applies identical increments to both legs; the
    # difference drifts only by float non-associativity
    rng = np.random.default_rng(1)
    st = sim.CouplingState.from_points(grp.point([0.0], [0.0], 0.0),
                                       grp.point([1.0], [0.0], 0.0))
    j = cpl.synchronous_matrix(1)
    for _ in range(50):
        st = sim.step_full(st, j, 1e-3, rng.standard_normal(2) * math.sqrt(1e-3))
    assert np.allclose(st.b - st.bprime, [-1.0, 0.0], atol=1e-12)
    assert math.isclose(st.r2, 1.0, rel_tol=1e-12)


def test_step_full_defect_noise_requires_dwt():
    st = sim.CouplingState.from_points(grp.identity(1), grp.point([1.0], [0.0], 0.0))
    half = 0.5 * np.eye(2)
    jhat = cpl.complete_jhat(half)
    out = sim.step_full(st, half, 1e-3, np.zeros(2), dwt=np.ones(2), jhat=jhat)
    # with dw = 0 the second leg moves only through the defect noise
    assert np.allclose(out.bprime - st.bprime, jhat @ np.ones(2))
    assert np.array_equal(out.b, st.b)


def test_step_reduced_closed_forms():
    # synchronous: r2 frozen; rho = 0, so the z-noise is carried by g2
    r2, z = sim.step_reduced(4.0, 0.5, cpl.synchronous_matrix(1), 0.01, 1.3, -0.2)
    assert r2 == 4.0
    assert math.isclose(z, 0.5 + 0.5 * 2.0 * 2.0 * math.sqrt(0.01) * (-0.2), rel_tol=1e-15)
    # perverse: deterministic r2 += 4 dt, z frozen
    r2, z = sim.step_reduced(4.0, 0.5, cpl.perverse_matrix(1), 0.01, 1.3, -0.2)
    assert r2 == 4.0 + 4.0 * 0.01
    assert z == 0.5
    # clamping at zero: 0.01 - 2*0.1*2*0.05 + 4e-4 < 0
    r2, _ = sim.step_reduced(0.01, 0.0, cpl.reflection_matrix(1), 1e-4, -5.0, 0.0)
    assert r2 == 0.0


def test_default_checkpoints_dyadic():
    cks = sim.default_checkpoints(8.0, 0.5)
    assert cks[0] == 0.0 and cks[-1] == 8.0
    assert all(b > a for a, b in zip(cks, cks[1:]))
    assert 4.0 in cks and 2.0 in cks and 1.0 in cks


@pytest.mark.parametrize("scheme", ["full", "reduced"])
def test_simulate_ensemble_shapes_and_meta(scheme):
    pol = cpl.synchronous_policy()
    ens = sim.simulate_ensemble(
        pol, grp.identity(1), grp.point([1.0], [0.0], 0.0),
        T=0.25, n_paths=300, dt=0.005, seed=3, scheme=scheme,
        checkpoints=[0.1, 0.25],
    )
    assert ens.r2.shape == (2, 300)
    assert ens.n_paths == 300
    assert np.allclose(ens.times, [0.1, 0.25])
    assert ens.meta["scheme"] == scheme
    assert np.array_equal(ens.d_h(), np.sqrt(ens.r2 + np.abs(ens.z)))
    # synchronous pairs never merge and keep R^2 = R0^2 exactly
    assert np.all(ens.r2 == 1.0)
    assert np.all(np.isnan(ens.absorbed_at))


def test_simulate_ensemble_thread_count_is_invisible():
    pol = cpl.kendall_policy()
    kw = dict(
        a=grp.identity(1), aprime=grp.point([1.0], [0.0], 0.0),
        T=0.2, n_paths=2048 + 100, dt=0.005, seed=11, scheme="reduced",
        checkpoints=[0.2],
    )
    one = sim.simulate_ensemble(pol, threads=1, **kw)
    four = sim.simulate_ensemble(pol, threads=4, **kw)
    assert np.array_equal(one.r2, four.r2)
    assert np.array_equal(one.z, four.z)
    assert np.array_equal(one.absorbed_at, four.absorbed_at, equal_nan=True)


def test_simulate_ensemble_rejects_bad_args():
    pol = cpl.synchronous_policy()
    with pytest.raises(ValueError, match="scheme"):
        sim.simulate_ensemble(pol, grp.identity(1), grp.identity(1),
                              T=1.0, n_paths=4, scheme="magic")
    with pytest.raises(ValueError):
        sim.simulate_ensemble(pol, grp.identity(1), grp.identity(2),
                              T=1.0, n_paths=4)


def test_reflection_absorption_freezes_state():
    pol = cpl.reflection_policy()
    ens = sim.simulate_ensemble(
        pol, grp.identity(1), grp.point([0.2], [0.0], 0.0),
        T=4.0, n_paths=2000, dt=0.002, seed=5, scheme="reduced",
        checkpoints=[2.0, 4.0],
    )
    hit = np.isfinite(ens.absorbed_at)
    assert hit.mean() > 0.5  # R0 = 0.2 merges quickly
    merged_by_2 = hit & (ens.absorbed_at <= 2.0)
    # merged pairs stay merged with frozen vertical coordinate
    assert np.all(ens.r2[0][merged_by_2] == 0.0)
    assert np.all(ens.r2[1][merged_by_2] == 0.0)
    assert np.array_equal(ens.z[0][merged_by_2], ens.z[1][merged_by_2])


def test_full_scheme_synchronous_variance_identity():
    pol = cpl.synchronous_policy()
    ens = sim.simulate_ensemble(
        pol, grp.identity(1), grp.point([1.0], [0.0], 0.0),
        T=1.0, n_paths=4000, dt=1e-3, seed=7, scheme="full", checkpoints=[1.0],
    )
    # Var(Z_T) = R0^2 T for synchronous; sample-variance 3 sigma band
    v = ens.z[-1].var(ddof=1)
    se = v * math.sqrt(2.0 / (ens.n_paths - 1))
    assert abs(v - 1.0) < 3 * se
    assert abs(ens.z[-1].mean()) < 3 * ens.z[-1].std(ddof=1) / math.sqrt(ens.n_paths)


def test_exact_reflection_radial_martingale_and_hitting():
    ens = sim.simulate_reflection_exact(
        r0=1.0, T=25.0, n_paths=20000, seed=9, checkpoints=[1.0, 25.0],
    )
    r = np.sqrt(ens.r2)
    for i in range(2):
        se = r[i].std(ddof=1) / math.sqrt(ens.n_paths)
        assert abs(r[i].mean() - 1.0) < 3 * se
    tau = ens.absorbed_at
    fin = np.isfinite(tau)
    # absorbed fraction matches the hitting CDF
    p = est.hitting_cdf(25.0, 1.0)
    assert abs(fin.mean() - p) < 3 * math.sqrt(p * (1 - p) / ens.n_paths)
    # conditional hitting-time law
    res = kstest(tau[fin], lambda u: est.hitting_cdf(u, 1.0) / p)
    assert res.pvalue > 1e-3


def test_exact_reflection_threads_and_z0():
    kw = dict(r0=0.5, T=2.0, n_paths=1500, z0=0.7, checkpoints=[2.0], seed=13)
    one = sim.simulate_reflection_exact(threads=1, **kw)
    four = sim.simulate_reflection_exact(threads=4, **kw)
    assert np.array_equal(one.z, four.z)
    assert np.array_equal(one.r2, four.r2)
    # Z is a centred perturbation of its start
    assert abs(one.z[-1].mean() - 0.7) < 3 * one.z[-1].std(ddof=1) / math.sqrt(1500)


def test_to_csv_deterministic_and_capped(tmp_path):
    pol = cpl.perverse_policy()
    ens = sim.simulate_ensemble(
        pol, grp.identity(1), grp.point([1.0], [0.0], 0.0),
        T=0.1, n_paths=50, dt=0.01, seed=1, scheme="reduced", checkpoints=[0.05, 0.1],
    )
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    ens.to_csv(p1, header_note="first run")
    ens.to_csv(p2, header_note="second run")
    b1, b2 = p1.read_text().splitlines(), p2.read_text().splitlines()
    assert b1[0] != b2[0] and b1[1:] == b2[1:]
    assert b1[1] == "checkpoint_time,path_id,R2,Z,V,QV"
    assert len(b1) == 2 + 2 * 50
    capped = tmp_path / "c.csv"
    ens.to_csv(capped, max_paths=10)
    assert len(capped.read_text().splitlines()) == 2 + 2 * 10


def test_kendall_success_times_behaviour():
    pol = cpl.kendall_policy()
    times = sim.kendall_success_times(
        pol, r2_0=1.0, z_0=0.0, t_max=10.0, n_paths=3000, alpha=0.01, seed=2,
    )
    assert times.shape == (3000,)
    won = np.isfinite(times)
    assert 0.05 < won.mean() < 0.6
    assert np.all(times[won] <= 10.0) and np.all(times[won] > 0.0)
    # deterministic
    again = sim.kendall_success_times(
        pol, r2_0=1.0, z_0=0.0, t_max=10.0, n_paths=3000, alpha=0.01, seed=2,
    )
    assert np.array_equal(times, again, equal_nan=True)
    with pytest.raises(ValueError, match="kendall"):
        sim.kendall_success_times(cpl.synchronous_policy(), 1.0, 0.0, 1.0, 10)
