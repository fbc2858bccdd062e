"""Acceptance gate: one test per release criterion, with pinned tolerances.

Each test is self-contained and states its tolerance and time budget inline.
Random inputs are seeded so the gate is deterministic.
"""

import math
import time

import numpy as np
import pytest
from scipy.optimize import linprog

from rdplab.coding import SchemeSpec, run_experiment, select_codebook
from rdplab.gaussian import (
    mc_verify_bivariate,
    rate_bivariate,
    rate_normal,
    rho_residual,
    solve_rho,
)
from rdplab.probability import (
    DistortionMatrix,
    JointPmf,
    Kernel,
    conditional_entropy,
    conditional_mutual_information,
    entropy_bits,
    expected_distortion,
    mutual_information,
    tv_distance,
)
from rdplab.regions import (
    Candidate,
    RegionQuery,
    Setting,
    brute_force_min_rate,
    candidate_from_kernels,
    check_feasible,
    evaluate_bounds,
    min_rate,
)
from rdplab.upgrade import UpgradeInput, upgrade, verify_upgrade, block_distortion_matrix


DELTA_GRID = [0.05 * k for k in range(1, 40)]  # 39 points in (0, 2)


def h2(p):
    if p in (0.0, 1.0):
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def uniform_binary():
    return JointPmf(("x", "z"), np.array([[0.5], [0.5]]))


def bsc_candidate(a, b):
    pxz = uniform_binary()
    enc = Kernel(np.array([[1 - a, a], [a, 1 - a]]))
    dec = Kernel(np.array([[1 - b, b], [b, 1 - b]]))
    return candidate_from_kernels(pxz, enc, dec, z_irrelevant=True)


# ---------------------------------------------------------------------------
# 1. Gaussian closed forms solve the defining equation across the grid


def test_criterion_1_gaussian_grid_residuals():
    start = time.monotonic()
    for delta in DELTA_GRID:
        for rc in (0.0, 0.25, 1.0, 3.0, math.inf):
            rho = solve_rho(delta, rc)
            assert abs(rho_residual(rho, delta, rc)) < 1e-12
            assert math.isfinite(rate_normal(delta, rc))
    assert time.monotonic() - start < 1.0


# ---------------------------------------------------------------------------
# 2. Perfect output statistics with no common randomness cost half a bit


def test_criterion_2_half_bit_premium():
    for delta in [d for d in DELTA_GRID if d <= 1.0]:
        premium = rate_normal(delta, 0.0) - 0.5 * math.log2(1.0 / delta)
        assert premium == pytest.approx(0.5, abs=1e-12)


# ---------------------------------------------------------------------------
# 3. Two-terminal Gaussian curve: degenerate side information and boundary


def test_criterion_3_bivariate_consistency():
    for delta in DELTA_GRID:
        assert rate_bivariate(delta, 0.0) == pytest.approx(
            rate_normal(delta, math.inf), abs=1e-12
        )
    for eta in (0.25, -0.25, 0.5, -0.5, 0.9, -0.9):
        dmax = 2.0 - 2.0 * abs(eta)
        assert rate_bivariate(dmax, eta) == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------------------
# 4. Monte Carlo validation of the Gaussian construction (10^6 samples)


def test_criterion_4_gaussian_monte_carlo():
    start = time.monotonic()
    for eta, delta in ((0.0, 1.0), (0.5, 1.0), (0.9, 0.2)):
        out = mc_verify_bivariate(eta=eta, delta=delta, n_samples=1_000_000, seed=0)
        rho = 1.0 - delta / 2.0
        assert abs(out["est_rho2"] - rho**2) <= 0.004
        assert abs(out["est_distortion"] - delta) <= 0.008
    assert time.monotonic() - start < 30.0


# ---------------------------------------------------------------------------
# 5. Optimizer agrees with the exhaustive mesh oracle on random instances


def test_criterion_5_optimizer_vs_oracle():
    start = time.monotonic()
    rng = np.random.default_rng(2026)
    d = DistortionMatrix.hamming(2)
    settings = [
        Setting("both", "marginal"),
        Setting("decoder", "marginal"),
        Setting("both", "joint"),
    ]
    worst = 0.0
    for i in range(10):
        pxz = JointPmf(("x", "z"), rng.dirichlet(np.ones(4) * 2).reshape(2, 2))
        delta = float(rng.uniform(0.05, 0.3))
        for s in settings:
            q = RegionQuery(
                pxz, d, s, delta=delta, r_c=math.inf, v_size=2,
                restarts=24, iterations=40, seed=i,
            )
            gap = abs(min_rate(q).rate - brute_force_min_rate(q).rate)
            worst = max(worst, gap)
            assert gap <= 0.02, f"instance {i}, {s.label()}: gap {gap:.4f}"
    assert time.monotonic() - start < 600.0


# ---------------------------------------------------------------------------
# 6. Binary benchmark: unlimited common randomness recovers 1 - h(delta)


def test_criterion_6_binary_benchmark():
    d = DistortionMatrix.hamming(2)
    for delta in (0.05, 0.11, 0.25):
        q = RegionQuery(
            uniform_binary(), d, Setting("none", "marginal"),
            delta=delta, r_c=math.inf, v_size=2,
            restarts=12, iterations=40, seed=0,
        )
        target = 1 - h2(delta)
        assert min_rate(q).rate == pytest.approx(target, abs=0.01)
        assert brute_force_min_rate(q).rate == pytest.approx(target, abs=0.01)


# ---------------------------------------------------------------------------
# 7. Structural identities on random feasible candidates


def _feasible_output_kernel(rng, p_zv, target, ny, joint_mode=False, p_z=None):
    """Random vertex of the polytope of output kernels meeting the realism
    constraint exactly (rows over (z, v), row-major)."""
    nz, nv = p_zv.shape
    nrows = nz * nv
    nvar = nrows * ny
    a_eq, b_eq = [], []
    for r in range(nrows):
        row = np.zeros(nvar)
        row[r * ny:(r + 1) * ny] = 1.0
        a_eq.append(row)
        b_eq.append(1.0)
    if joint_mode:
        for z in range(nz):
            for y in range(ny):
                row = np.zeros(nvar)
                for v in range(nv):
                    row[(z * nv + v) * ny + y] = p_zv[z, v]
                a_eq.append(row)
                b_eq.append(target[y, z])
    else:
        for y in range(ny):
            row = np.zeros(nvar)
            for z in range(nz):
                for v in range(nv):
                    row[(z * nv + v) * ny + y] = p_zv[z, v]
            a_eq.append(row)
            b_eq.append(target[y])
    res = linprog(
        rng.normal(size=nvar), A_eq=np.array(a_eq), b_eq=np.array(b_eq),
        bounds=(0, 1), method="highs",
    )
    if not res.success:
        return None
    return Kernel(np.clip(res.x, 0, None).reshape(nrows, ny)
                  / res.x.reshape(nrows, ny).sum(axis=1, keepdims=True))


def _make_feasible(rng, pxz, decoder_only, joint_mode, nv=3):
    nx, nz = pxz.tensor.shape
    rows = nx if decoder_only else nx * nz
    enc = Kernel(rng.dirichlet(np.ones(nv), size=rows))
    # p_zv induced by the encoder
    t = pxz.tensor  # (x, z)
    if decoder_only:
        p_zv = np.einsum("xz,xv->zv", t, enc.rows)
    else:
        p_zv = np.einsum("xz,xzv->zv", t, enc.rows.reshape(nx, nz, nv))
    if joint_mode:
        target = t  # indexed (y, z) with y sharing the source alphabet
    else:
        target = t.sum(axis=1)
    dec = _feasible_output_kernel(rng, p_zv, target, nx, joint_mode=joint_mode)
    if dec is None:
        return None
    return candidate_from_kernels(pxz, enc, dec, z_irrelevant=decoder_only)


def _lift_side_info_into_code(cand):
    """Map (x, z, v, y) to (x, 1, (v, z), y): treat the side information as
    part of the code index and drop it from the side channel."""
    t = cand.joint.tensor  # (x, z, v, y)
    nx, nz, nv, ny = t.shape
    lifted = t.transpose(0, 2, 1, 3).reshape(nx, 1, nv * nz, ny)
    return Candidate(JointPmf(("x", "z", "v", "y"), lifted))


def test_criterion_7_structural_identities():
    rng = np.random.default_rng(99)
    none_setting = Setting("none", "marginal")
    ed_m = Setting("both", "marginal")
    ed_j = Setting("both", "joint")
    d_m = Setting("decoder", "marginal")
    checked = 0

    # (a) independent side information folds into the code index: the rate
    # bound is unchanged and the sum bound shifts by exactly H(Z)
    while checked < 125:
        px = rng.dirichlet(np.ones(2) * 2)
        pz = rng.dirichlet(np.ones(2) * 2)
        pxz = JointPmf(("x", "z"), np.outer(px, pz))
        cand = _make_feasible(rng, pxz, decoder_only=False, joint_mode=False)
        if cand is None:
            continue
        assert not check_feasible(cand, ed_m, pxz, tol=1e-8)
        b = evaluate_bounds(cand, ed_m)
        lifted = _lift_side_info_into_code(cand)
        px_j = JointPmf(("x", "z"), px.reshape(2, 1))
        assert not check_feasible(lifted, none_setting, px_j, tol=1e-8)
        lb = evaluate_bounds(lifted, none_setting)
        hz = entropy_bits(pz)
        assert lb["rate"] == pytest.approx(b["rate"], abs=1e-9)
        assert lb["sum"] == pytest.approx(b["sum"] + hz, abs=1e-9)
        checked += 1

    # (b) general side information embeds into the no-side-information
    # problem at rate + I(X;Z) and sum + H(Z) (extra CR worth H(Z|X))
    n_b = 0
    while n_b < 125:
        pxz = JointPmf(("x", "z"), rng.dirichlet(np.ones(4) * 2).reshape(2, 2))
        cand = _make_feasible(rng, pxz, decoder_only=False, joint_mode=False)
        if cand is None:
            continue
        b = evaluate_bounds(cand, ed_m)
        lifted = _lift_side_info_into_code(cand)
        lb = evaluate_bounds(lifted, none_setting)
        ixz = mutual_information(pxz, "x", "z")
        hz = entropy_bits(pxz.tensor.sum(axis=0))
        hz_given_x = conditional_entropy(pxz, "z", "x")
        assert lb["rate"] == pytest.approx(b["rate"] + ixz, abs=1e-9)
        assert lb["sum"] == pytest.approx(b["sum"] + hz, abs=1e-9)
        # the extra rate plus the extra CR is exactly H(Z)
        assert ixz + hz_given_x == pytest.approx(hz, abs=1e-9)
        n_b += 1
        checked += 1

    # (c) a code built for decoder-only side information is never charged
    # more under two-sided side information
    n_c = 0
    while n_c < 125:
        pxz = JointPmf(("x", "z"), rng.dirichlet(np.ones(4) * 2).reshape(2, 2))
        cand = _make_feasible(rng, pxz, decoder_only=True, joint_mode=False)
        if cand is None:
            continue
        bd = evaluate_bounds(cand, d_m)
        be = evaluate_bounds(cand, ed_m)
        assert be["rate"] <= bd["rate"] + 1e-9
        assert be["sum"] <= bd["sum"] + 1e-9
        # under the encoder chain the two rate forms coincide exactly
        assert be["rate"] == pytest.approx(bd["rate"], abs=1e-9)
        n_c += 1
        checked += 1

    # (d) joint realism implies marginal realism and a larger sum bound
    n_d = 0
    while n_d < 125:
        pxz = JointPmf(("x", "z"), rng.dirichlet(np.ones(4) * 2).reshape(2, 2))
        cand = _make_feasible(rng, pxz, decoder_only=False, joint_mode=True)
        if cand is None:
            continue
        assert not check_feasible(cand, ed_j, pxz, tol=1e-8)
        assert not check_feasible(cand, ed_m, pxz, tol=1e-8)
        bj = evaluate_bounds(cand, ed_j)
        bm = evaluate_bounds(cand, ed_m)
        assert bm["rate"] == pytest.approx(bj["rate"], abs=1e-12)
        assert bm["sum"] <= bj["sum"] + 1e-9
        hz_given_y = conditional_entropy(cand.joint, "z", "y")
        assert bj["sum"] - bm["sum"] == pytest.approx(hz_given_y, abs=1e-9)
        n_d += 1
        checked += 1

    assert checked >= 500


# ---------------------------------------------------------------------------
# 8. Finite-blocklength simulator: realism gap shrinks with blocklength


def test_criterion_8_simulator_convergence():
    start = time.monotonic()
    cand = bsc_candidate(0.25, 0.4)
    d = DistortionMatrix.hamming(2)
    delta_cand = expected_distortion(cand.joint.marginal(("x", "y")), d)
    eps = 0.05
    # 0.1 bits above the binding single-letter threshold
    rate = max(
        mutual_information(cand.joint, "x", "v"),
        mutual_information(cand.joint, "y", "v"),
    ) + 0.1 - eps
    tvs = []
    cb = None
    for n in (4, 8, 12):
        spec = SchemeSpec(
            mode="ed", n=n, rate=rate, cr_rate=0.0, candidate=cand,
            epsilon=eps, seed=0,
        )
        cb, rep = select_codebook(spec, d, k=8)
        tvs.append(rep["tv_code_to_target"])
    assert tvs[0] >= tvs[1] >= tvs[2], f"TV not non-increasing: {tvs}"
    assert tvs[2] < 0.25
    rep12 = run_experiment(cb, d, n_trials=10_000, seed=0)
    assert rep12.mean_distortion <= delta_cand + 0.05
    assert time.monotonic() - start < 300.0


# ---------------------------------------------------------------------------
# 9. Upgrader guarantees on random induced codes


def test_criterion_9_upgrader_guarantees():
    start = time.monotonic()
    rng = np.random.default_rng(50)
    d = DistortionMatrix.hamming(2)
    n = 2
    dn = block_distortion_matrix(d, n)
    for i in range(50):
        t = rng.dirichlet(np.ones(4 * 2 * 3 * 4)).reshape(4, 2, 3, 4)
        j = JointPmf(("xn", "zn", "w", "yn"), t)
        mode = "marginal" if i % 2 == 0 else "joint"
        if mode == "marginal":
            target = rng.dirichlet(np.ones(4))
        else:
            pz = t.sum(axis=(0, 2, 3))
            cond = rng.dirichlet(np.ones(4), size=2)
            target = (cond * pz[:, None]).T
        inp = UpgradeInput(joint=j, target=target, mode=mode)
        out = upgrade(inp)
        # exact target law
        if mode == "marginal":
            got = out.joint.tensor.sum(axis=(0, 1, 2))
        else:
            got = out.joint.tensor.sum(axis=(0, 2)).T
        assert np.abs(got - target).max() <= 1e-12
        # mass moved never exceeds the pre-upgrade realism gap
        assert tv_distance(j, out.joint) <= out.tv_bound + 1e-12
        # distortion increase bounded by d_max times the gap
        e_old = float(np.einsum("xzwy,xy->", t, dn))
        e_new = float(np.einsum("xzwy,xy->", out.joint.tensor, dn))
        assert e_new <= e_old + d.d_max * out.tv_bound + 1e-9
        verify_upgrade(inp, out, d=d, n=n)
    assert time.monotonic() - start < 60.0


# ---------------------------------------------------------------------------
# 10. Converse sanity: simulated points sit inside the single-letter region
#     up to the finite-blocklength slack


def test_criterion_10_converse_sanity():
    rng = np.random.default_rng(7)
    d = DistortionMatrix.hamming(2)
    pxz = uniform_binary()
    eps = 0.05
    for k in range(20):
        a = float(rng.uniform(0.1, 0.35))
        b = float(rng.uniform(0.3, 0.45))
        n = int(rng.choice([4, 6]))
        rc = float(rng.choice([0.0, 0.4]))
        cand = bsc_candidate(a, b)
        rate = max(
            mutual_information(cand.joint, "x", "v"),
            mutual_information(cand.joint, "y", "v") - rc,
        ) + 0.08
        spec = SchemeSpec(
            mode="ed", n=n, rate=rate, cr_rate=rc, candidate=cand,
            epsilon=eps, seed=k,
        )
        _, rep = select_codebook(spec, d, k=4)
        tv = rep["tv_code_to_target"]
        dist = rep["distortion_code"]
        q = RegionQuery(
            pxz, d, Setting("none", "marginal"), delta=dist, r_c=rc,
            v_size=2, restarts=8, iterations=40, seed=k,
        )
        boundary = min_rate(q).rate
        slack = eps + 2 * d.d_max * tv
        assert rate + slack >= boundary - 1e-6, (
            f"config {k}: rate {rate:.4f} + slack {slack:.4f} "
            f"< boundary {boundary:.4f}"
        )


# ---------------------------------------------------------------------------
# 11. Total-variation toolbox identities (1000 random instances each)


def test_criterion_11_tv_toolbox():
    rng = np.random.default_rng(1111)

    # mixture identity: TV of joints equals the mixture of row TVs
    for _ in range(1000):
        pi = rng.dirichlet(np.ones(5))
        k1 = rng.dirichlet(np.ones(4), size=5)
        k2 = rng.dirichlet(np.ones(4), size=5)
        lhs = tv_distance(pi[:, None] * k1, pi[:, None] * k2)
        rhs = float((pi * 0.5 * np.abs(k1 - k2).sum(axis=1)).sum())
        assert abs(lhs - rhs) <= 1e-12

    # marginalization never increases TV
    for _ in range(1000):
        p = rng.dirichlet(np.ones(12)).reshape(3, 4)
        q = rng.dirichlet(np.ones(12)).reshape(3, 4)
        assert tv_distance(p.sum(axis=1), q.sum(axis=1)) <= tv_distance(p, q) + 1e-12

    # passing two inputs through the same channel: joint TV is preserved
    # exactly, output TV can only shrink
    for _ in range(1000):
        p = rng.dirichlet(np.ones(5))
        q = rng.dirichlet(np.ones(5))
        k = rng.dirichlet(np.ones(4), size=5)
        base = tv_distance(p, q)
        assert abs(tv_distance(p[:, None] * k, q[:, None] * k) - base) <= 1e-12
        assert tv_distance(p @ k, q @ k) <= base + 1e-12

    # coupling bound: TV of the marginals is at most the mismatch mass
    for _ in range(1000):
        c = rng.dirichlet(np.ones(25)).reshape(5, 5)
        mismatch = float(c.sum() - np.trace(c))
        assert tv_distance(c.sum(axis=1), c.sum(axis=0)) <= mismatch + 1e-12

    # optimal critic accuracy between equiprobable hypotheses
    for _ in range(1000):
        p = rng.dirichlet(np.ones(6))
        q = rng.dirichlet(np.ones(6))
        acc = 0.5 * float(np.maximum(p, q).sum())
        assert abs(acc - (0.5 + 0.5 * tv_distance(p, q))) <= 1e-12
