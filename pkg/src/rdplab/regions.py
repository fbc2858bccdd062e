"""Single-letter achievable-rate regions for source coding with an exact
output-distribution constraint, side information, and a limited common
randomness budget.

A candidate is a joint law over (x, z, v, y) where v is the auxiliary
codeword variable, built from two kernels so the chain x - (z, v) - y holds
by construction.  Each setting contributes two bound values: a rate bound
``r`` and a rate-plus-common-randomness bound ``sum``; the boundary rate at
distortion ``delta`` and CR budget ``r_c`` is

    min over feasible candidates of  max(r, sum - r_c)

(with the sum bound dropped when ``r_c`` is unlimited).  Logs are base 2.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, minimize
from scipy.sparse.csgraph import connected_components
from scipy.special import xlogy

from .probability import (
    CapExceeded,
    DistortionMatrix,
    JointPmf,
    Kernel,
    check_cap,
    conditional_mutual_information,
    joint_from_parts,
    tv_distance,
)

_LN2 = math.log(2.0)

FEAS_TOL = 1e-7

SIDE_CHOICES = ("both", "decoder", "none")
REALISM_CHOICES = ("marginal", "joint")


class InfeasibleError(RuntimeError):
    """No candidate satisfies the constraints of the query."""


@dataclass(frozen=True)
class Setting:
    """Who sees the side information, and which realism constraint binds."""

    side_info: str
    realism: str

    def __post_init__(self):
        if self.side_info not in SIDE_CHOICES:
            raise ValueError(f"side_info must be one of {SIDE_CHOICES}")
        if self.realism not in REALISM_CHOICES:
            raise ValueError(f"realism must be one of {REALISM_CHOICES}")
        if self.side_info == "none" and self.realism == "joint":
            raise ValueError("joint realism is undefined without side information")

    @classmethod
    def parse(cls, text: str) -> "Setting":
        """Parse 'ed-marginal', 'd-joint', 'none', etc."""
        t = text.strip().lower()
        if t in ("none", "none-marginal", "no-side-info"):
            return cls("none", "marginal")
        try:
            side_txt, realism = t.split("-", 1)
        except ValueError:
            raise ValueError(f"cannot parse setting {text!r}") from None
        side = {"ed": "both", "d": "decoder"}.get(side_txt)
        if side is None or realism not in REALISM_CHOICES:
            raise ValueError(f"cannot parse setting {text!r}")
        return cls(side, realism)

    def label(self) -> str:
        if self.side_info == "none":
            return "none"
        return {"both": "ed", "decoder": "d"}[self.side_info] + "-" + self.realism


@dataclass(frozen=True)
class Candidate:
    """A joint law over (x, z, v, y)."""

    joint: JointPmf

    def __post_init__(self):
        if self.joint.names != ("x", "z", "v", "y"):
            raise ValueError("candidate joint must have axes (x, z, v, y)")


@dataclass
class RegionQuery:
    p_xz: JointPmf
    d: DistortionMatrix
    setting: Setting
    delta: float
    r_c: float  # may be math.inf
    v_size: int | None = None
    restarts: int = 32
    iterations: int = 150
    seed: int = 0

    def __post_init__(self):
        if self.p_xz.names != ("x", "z"):
            raise ValueError("p_xz must have axes (x, z)")
        nx, nz = self.p_xz.sizes
        if self.d.values.shape != (nx, nx):
            raise ValueError(
                "distortion matrix must be square over the source alphabet "
                "(realism identifies the reconstruction alphabet with it)"
            )
        if self.setting.side_info == "none" and nz != 1:
            raise ValueError("side_info='none' requires a trivial z axis (size 1)")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.r_c < 0:
            raise ValueError("r_c must be nonnegative")
        if self.v_size is None:
            self.v_size = nx * nz + 2
        if self.v_size < 1:
            raise ValueError("v_size must be positive")


@dataclass
class RatePoint:
    rate: float
    rate_bound: float
    sum_bound: float
    delta: float
    r_c: float
    converged: bool
    realism_gap: float
    candidate: Candidate | None = None
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# bound evaluation (raw-tensor fast path)


def _h(a: np.ndarray) -> float:
    return float(-xlogy(a, a).sum()) / _LN2


def _bounds_from_tensor(t: np.ndarray, setting: Setting) -> tuple[float, float]:
    """(rate bound, sum bound) for a joint tensor over (x, z, v, y)."""
    txz = t.sum(axis=(2, 3))
    tzv = t.sum(axis=(0, 3))
    tzvy = t.sum(axis=0)
    txzv = t.sum(axis=3)
    tz = txz.sum(axis=0)
    tyz = t.sum(axis=(0, 2)).T  # (y, z)
    ty = tyz.sum(axis=1)
    h_z = _h(tz)
    i_yv_given_z = _h(tyz) + _h(tzv) - h_z - _h(tzvy)
    if setting.side_info == "decoder" and setting.realism == "marginal":
        tv_ = tzv.sum(axis=0)
        tx = txz.sum(axis=1)
        txv = txzv.sum(axis=1)
        tvy = tzvy.sum(axis=0)
        h_v = _h(tv_)
        i_xv = _h(tx) + h_v - _h(txv)
        i_zv = h_z + h_v - _h(tzv)
        i_yv = _h(ty) + h_v - _h(tvy)
        return i_xv - i_zv, i_yv - i_zv
    i_xv_given_z = _h(txz) + _h(tzv) - h_z - _h(txzv)
    if setting.realism == "joint":
        return i_xv_given_z, i_yv_given_z
    h_z_given_y = _h(tyz) - _h(ty)
    return i_xv_given_z, i_yv_given_z - h_z_given_y


def evaluate_bounds(cand: Candidate, setting: Setting) -> dict:
    """Raw rate and sum bound values of a candidate in a given setting."""
    r, s = _bounds_from_tensor(cand.joint.tensor, setting)
    return {"rate": r, "sum": s}


def _realism_gap(t: np.ndarray, p_xz: np.ndarray, setting: Setting) -> float:
    if setting.realism == "joint":
        tyz = t.sum(axis=(0, 2)).T
        return 0.5 * float(np.abs(tyz - p_xz).sum())
    ty = t.sum(axis=(0, 1, 2))
    return 0.5 * float(np.abs(ty - p_xz.sum(axis=1)).sum())


def check_feasible(
    cand: Candidate,
    setting: Setting,
    p_xz: JointPmf,
    d: DistortionMatrix | None = None,
    delta: float | None = None,
    tol: float = FEAS_TOL,
) -> list[str]:
    """List of violated constraints (empty when the candidate is feasible)."""
    out = []
    j = cand.joint
    t = j.tensor
    if tv_distance(j.marginal(("x", "z")), p_xz) > tol:
        out.append("source marginal does not match p_xz")
    if conditional_mutual_information(j, "x", "y", ("z", "v")) > tol:
        out.append("chain x-(z,v)-y violated")
    if setting.side_info == "decoder":
        if conditional_mutual_information(j, "z", "v", "x") > tol:
            out.append("chain z-x-v violated")
    gap = _realism_gap(t, p_xz.tensor, setting)
    if gap > tol:
        out.append(f"realism gap {gap:.3e}")
    if d is not None and delta is not None:
        txy = t.sum(axis=(1, 2))
        e = float((txy * d.values).sum())
        if e > delta + tol:
            out.append(f"distortion {e:.6f} exceeds {delta}")
    return out


# ---------------------------------------------------------------------------
# optimizer


def _assemble(p_xz: np.ndarray, a: np.ndarray, b: np.ndarray, z_irrelevant: bool) -> np.ndarray:
    nx, nz = p_xz.shape
    nv = a.shape[-1]
    ny = b.shape[-1]
    if z_irrelevant:
        e = np.broadcast_to(a[:, None, :], (nx, nz, nv))
    else:
        e = a.reshape(nx, nz, nv)
    dd = b.reshape(nz, nv, ny)
    return p_xz[:, :, None, None] * e[:, :, :, None] * dd[None, :, :, :]


class _Objective:
    """Penalized scalarized objective over the two stacked kernel blocks."""

    def __init__(self, q: RegionQuery):
        self.q = q
        self.p_xz = q.p_xz.tensor
        self.nx, self.nz = self.p_xz.shape
        self.nv = q.v_size
        self.ny = self.nx
        self.z_irrelevant = q.setting.side_info == "decoder"
        self.ra = self.nx if self.z_irrelevant else self.nx * self.nz
        self.rb = self.nz * self.nv
        self.mu = 10.0

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        na = self.ra * self.nv
        return x[:na].reshape(self.ra, self.nv), x[na:].reshape(self.rb, self.ny)

    def tensor(self, x: np.ndarray) -> np.ndarray:
        a, b = self.split(x)
        return _assemble(self.p_xz, a, b, self.z_irrelevant)

    def raw(self, x: np.ndarray) -> tuple[float, float, float, float]:
        """(objective, realism gap, distortion, sum bound)."""
        t = self.tensor(x)
        r, s = _bounds_from_tensor(t, self.q.setting)
        obj = r if math.isinf(self.q.r_c) else max(r, s - self.q.r_c)
        gap = _realism_gap(t, self.p_xz, self.q.setting)
        txy = t.sum(axis=(1, 2))
        dist = float((txy * self.q.d.values).sum())
        return obj, gap, dist, s

    def penalized(self, x: np.ndarray) -> float:
        obj, gap, dist, _ = self.raw(x)
        excess = max(0.0, dist - self.q.delta)
        return obj + self.mu * (gap * gap + excess * excess)


def _eg_rows(rows: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    out = rows * np.exp(-lr * (grad - grad.min(axis=1, keepdims=True)))
    out = np.maximum(out, 1e-300)
    return out / out.sum(axis=1, keepdims=True)


def _fd_grad(f, x: np.ndarray, idx: range, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    f0 = f(x)
    for i in idx:
        xp = x.copy()
        xp[i] += h
        g[i] = (f(xp) - f0) / h
    return g


def _eg_descent(ob: _Objective, x0: np.ndarray, iterations: int) -> np.ndarray:
    """Alternating exponentiated-gradient descent on the two simplex blocks,
    with a x10 penalty schedule until the realism gap is resolved."""
    x = x0.copy()
    na = ob.ra * ob.nv
    n = x.size
    ob.mu = 10.0
    for _round in range(4):
        lr = 1.0
        for _it in range(iterations):
            ga, _ = ob.split(_fd_grad(ob.penalized, x, range(na)))
            a, _ = ob.split(x)
            a = _eg_rows(a, ga * lr, 1.0)
            x = np.concatenate([a.reshape(-1), x[na:]])
            _, gb = ob.split(_fd_grad(ob.penalized, x, range(na, n)))
            _, b = ob.split(x)
            b = _eg_rows(b, gb * lr, 1.0)
            x = np.concatenate([x[:na], b.reshape(-1)])
            lr = max(0.05, lr * 0.98)
        _, gap, _, _ = ob.raw(x)
        if gap < FEAS_TOL:
            break
        ob.mu *= 10.0
    return x


def _slsqp_polish(ob: _Objective, x0: np.ndarray) -> np.ndarray | None:
    """Exact-constraint local refinement: minimize an epigraph variable t
    over both kernel blocks with equality realism and a distortion cap."""
    q = ob.q
    n = x0.size
    obj0, *_ = ob.raw(x0)
    z0 = np.concatenate([x0, [obj0]])

    def row_sums(z):
        a, b = ob.split(z[:n])
        return np.concatenate([a.sum(axis=1) - 1.0, b.sum(axis=1) - 1.0])

    def realism(z):
        t = ob.tensor(z[:n])
        if q.setting.realism == "joint":
            tyz = t.sum(axis=(0, 2)).T
            return (tyz - ob.p_xz).reshape(-1)
        return t.sum(axis=(0, 1, 2)) - ob.p_xz.sum(axis=1)

    def dist_slack(z):
        t = ob.tensor(z[:n])
        return q.delta - float((t.sum(axis=(1, 2)) * q.d.values).sum())

    def epi_rate(z):
        t = ob.tensor(z[:n])
        r, _ = _bounds_from_tensor(t, q.setting)
        return z[-1] - r

    def epi_sum(z):
        t = ob.tensor(z[:n])
        _, s = _bounds_from_tensor(t, q.setting)
        return z[-1] - (s - q.r_c)

    cons = [
        {"type": "eq", "fun": row_sums},
        {"type": "eq", "fun": realism},
        {"type": "ineq", "fun": dist_slack},
        {"type": "ineq", "fun": epi_rate},
    ]
    if not math.isinf(q.r_c):
        cons.append({"type": "ineq", "fun": epi_sum})
    bounds = [(0.0, 1.0)] * n + [(None, None)]
    try:
        res = minimize(
            lambda z: z[-1],
            z0,
            method="SLSQP",
            bounds=bounds,
            constraints=cons,
            options={"maxiter": 250, "ftol": 1e-12},
        )
    except Exception:
        return None
    if not np.all(np.isfinite(res.x)):
        return None
    x = res.x[:n]
    a, b = ob.split(np.clip(x, 0.0, None))
    a = a / a.sum(axis=1, keepdims=True)
    b = b / b.sum(axis=1, keepdims=True)
    return np.concatenate([a.reshape(-1), b.reshape(-1)])


def min_distortion(p_xz: JointPmf, d: DistortionMatrix, setting: Setting) -> float:
    """Smallest achievable distortion under the realism constraint (an
    optimal-coupling linear program; rate and CR are unconstrained)."""
    pxz = p_xz.tensor
    nx, nz = pxz.shape
    if setting.realism == "joint":
        total = 0.0
        for z in range(nz):
            pz = pxz[:, z].sum()
            if pz <= 0:
                continue
            total += pz * _ot_cost(pxz[:, z] / pz, pxz[:, z] / pz, d.values)
        return total
    px = pxz.sum(axis=1)
    return _ot_cost(px, px, d.values)


def _ot_cost(p: np.ndarray, q: np.ndarray, cost: np.ndarray) -> float:
    n, m = cost.shape
    a_eq = []
    b_eq = []
    for i in range(n):
        row = np.zeros((n, m))
        row[i, :] = 1.0
        a_eq.append(row.reshape(-1))
        b_eq.append(p[i])
    for j in range(m):
        col = np.zeros((n, m))
        col[:, j] = 1.0
        a_eq.append(col.reshape(-1))
        b_eq.append(q[j])
    res = linprog(cost.reshape(-1), A_eq=np.array(a_eq), b_eq=np.array(b_eq), bounds=(0, None), method="highs")
    if not res.success:
        raise InfeasibleError("coupling LP failed")
    return float(res.fun)


def _rate_point(ob: _Objective, x: np.ndarray, converged: bool, extra: dict | None = None) -> RatePoint:
    q = ob.q
    t = ob.tensor(x)
    r, s = _bounds_from_tensor(t, q.setting)
    gap = _realism_gap(t, ob.p_xz, q.setting)
    dist = float((t.sum(axis=(1, 2)) * q.d.values).sum())
    rate = r if math.isinf(q.r_c) else max(r, s - q.r_c)
    cand = Candidate(JointPmf(("x", "z", "v", "y"), t))
    return RatePoint(
        rate=rate,
        rate_bound=r,
        sum_bound=s,
        delta=dist,
        r_c=q.r_c,
        converged=converged,
        realism_gap=gap,
        candidate=cand,
        diagnostics=dict(extra or {}),
    )


def _random_start(ob: _Objective, rng: np.random.Generator) -> np.ndarray:
    a = rng.dirichlet(np.ones(ob.nv), size=ob.ra)
    b = rng.dirichlet(np.ones(ob.ny), size=ob.rb)
    return np.concatenate([a.reshape(-1), b.reshape(-1)])


def _structured_start(ob: _Objective, rng: np.random.Generator) -> np.ndarray:
    """Near-deterministic start: each input row concentrates on a random
    letter (optima often sit at almost-deterministic kernels)."""
    soft = 0.05
    a = np.full((ob.ra, ob.nv), soft / ob.nv)
    for i in range(ob.ra):
        a[i, rng.integers(ob.nv)] += 1.0 - soft
    b = np.full((ob.rb, ob.ny), soft / ob.ny)
    for i in range(ob.rb):
        b[i, rng.integers(ob.ny)] += 1.0 - soft
    return np.concatenate([a.reshape(-1), b.reshape(-1)])


def _vy_start(ob: _Objective, rng: np.random.Generator) -> np.ndarray:
    """Start shaped like v = y: the auxiliary row is a random output kernel
    embedded in the first ny letters of v, and the output kernel is the
    (softened) identity on those letters."""
    soft = 0.02
    k = rng.dirichlet(np.ones(ob.ny), size=ob.ra)
    a = np.full((ob.ra, ob.nv), soft / ob.nv)
    a[:, : ob.ny] += (1.0 - soft) * k
    b = np.full((ob.rb, ob.ny), soft / ob.ny)
    for z in range(ob.nz):
        for v in range(ob.nv):
            b[z * ob.nv + v, v if v < ob.ny else rng.integers(ob.ny)] += 1.0 - soft
    return np.concatenate([a.reshape(-1), b.reshape(-1)])


def _polish_chain(ob: _Objective, x0: np.ndarray, rounds: int = 3) -> tuple[float, np.ndarray] | None:
    """Repeated local polish (each round restarts the solver); returns the
    best exactly-feasible point reached, or None."""
    q = ob.q
    best = None
    x = x0
    for _ in range(rounds):
        p = _slsqp_polish(ob, x)
        if p is None:
            break
        obj, gap, dist, _ = ob.raw(p)
        if gap <= FEAS_TOL and dist <= q.delta + FEAS_TOL:
            if best is None or obj < best[0] - 1e-10:
                best = (obj, p)
            else:
                break
        x = p
    return best


def min_rate(q: RegionQuery) -> RatePoint:
    """Boundary rate at (delta, r_c): multi-start alternating
    exponentiated-gradient descent with a quadratic realism penalty,
    followed by an equality-constrained local polish (also run straight from
    each raw start, which explores basins the penalty descent abandons)."""
    if min_distortion(q.p_xz, q.d, q.setting) > q.delta + FEAS_TOL:
        raise InfeasibleError(
            f"delta={q.delta} is below the realism-constrained distortion floor"
        )
    ob = _Objective(q)
    rng = np.random.default_rng(q.seed)
    best: tuple[float, np.ndarray] | None = None
    n_feasible = 0
    def consider(res):
        nonlocal best, n_feasible
        if res is None:
            return
        n_feasible += 1
        if best is None or res[0] < best[0]:
            best = res

    starters = (_random_start, _vy_start, _structured_start)
    for _r in range(q.restarts):
        x0 = starters[_r % 3](ob, rng)
        x_eg = _eg_descent(ob, x0, q.iterations)
        consider(_polish_chain(ob, x_eg))
        consider(_polish_chain(ob, x0))
        # a realism-exact start: keep the auxiliary kernel, solve the output
        # kernel by the minimum-distortion linear program
        a, _ = ob.split(x0)
        if ob.z_irrelevant:
            e = np.broadcast_to(a[:, None, :], (ob.nx, ob.nz, ob.nv))
        else:
            e = a.reshape(ob.nx, ob.nz, ob.nv)
        ok, b_lp, _ = _inner_lp(ob, ob.p_xz[:, :, None] * e)
        if ok:
            b_mix = 0.9 * b_lp + 0.1 / ob.ny
            consider(_polish_chain(ob, np.concatenate([a.reshape(-1), b_mix.reshape(-1)])))
    if best is None:
        raise InfeasibleError("no feasible candidate found by the optimizer")
    # basin hops around the incumbent
    for _ in range(8):
        blend = rng.uniform(0.05, 0.35)
        x = (1.0 - blend) * best[1] + blend * _random_start(ob, rng)
        consider(_polish_chain(ob, x))
    again = _polish_chain(ob, best[1])
    if again is not None and again[0] < best[0]:
        best = again
    return _rate_point(
        ob, best[1], converged=True, extra={"feasible_restarts": n_feasible, "restarts": q.restarts}
    )


# ---------------------------------------------------------------------------
# brute-force oracle


def _simplex_grid(dim: int, k: int) -> np.ndarray:
    """All pmfs on `dim` letters with denominators k (step 1/k)."""
    pts = []
    for comp in itertools.combinations_with_replacement(range(dim), k):
        v = np.zeros(dim)
        for c in comp:
            v[c] += 1
        pts.append(v / k)
    return np.array(pts)


def _batch_rate_bound(ob: _Objective, grid: np.ndarray, choices: np.ndarray) -> np.ndarray:
    """Vectorized rate bound r over a batch of first-kernel mesh points.

    `choices` has shape (B, n_rows); rows index into `grid`.
    """
    q = ob.q
    pxz = ob.p_xz
    nx, nz = pxz.shape
    a = grid[choices]  # (B, ra, nv)
    if ob.z_irrelevant:
        # rows indexed by x; r = I(X;V) - I(Z;V)
        px = pxz.sum(axis=1)
        p_xv = px[None, :, None] * a  # (B, x, v)
        p_v = p_xv.sum(axis=1)
        p_zv = np.einsum("xz,bxv->bzv", pxz, a)
        h = lambda m: -xlogy(m, m).sum(axis=tuple(range(1, m.ndim))) / _LN2
        i_xv = h(p_v) + _h(px) - h(p_xv)
        i_zv = h(p_v) + _h(pxz.sum(axis=0)) - h(p_zv)
        return i_xv - i_zv
    # rows indexed row-major by (x, z); r = I(X;V|Z)
    a = a.reshape(a.shape[0], nx, nz, ob.nv)
    p_xzv = pxz[None, :, :, None] * a
    h = lambda m: -xlogy(m, m).sum(axis=tuple(range(1, m.ndim))) / _LN2
    p_zv = p_xzv.sum(axis=1)
    h_xz = _h(pxz)
    h_z = _h(pxz.sum(axis=0))
    return h_xz + h(p_zv) - h_z - h(p_xzv)


def _batch_min_distortion_ny2(ob: _Objective, grid: np.ndarray, choices: np.ndarray) -> np.ndarray:
    """Vectorized realism-constrained distortion floor over a batch of
    first-kernel mesh points, for binary reconstruction alphabets.

    For a fixed auxiliary kernel the floor is an optimal transport between
    the law of w = (z, v) and the realism target, with cost
    C[w, y] = E[d(X, y) | w]; with two destinations it reduces to a greedy
    fill along sorted cost differences.  Joint realism transports within
    each z slice, which is the same computation with z folded into the
    demand side, handled by solving slices separately.
    """
    q = ob.q
    pxz = ob.p_xz
    nx, nz = pxz.shape
    a = grid[choices]
    if ob.z_irrelevant:
        e = np.broadcast_to(a[:, None, :, :], (a.shape[0], nz, nx, ob.nv)).swapaxes(1, 2)
    else:
        e = a.reshape(a.shape[0], nx, nz, ob.nv)
    p_xzv = pxz[None, :, :, None] * e  # (B, x, z, v)
    dmat = q.d.values  # (x, y=2)
    cost = np.einsum("bxzv,xy->bzvy", p_xzv, dmat)  # mass-weighted cost
    if q.setting.realism == "joint":
        total = np.zeros(a.shape[0])
        for z in range(nz):
            m = p_xzv[:, :, z, :].sum(axis=1)  # (B, v) masses
            total += _greedy_two_sink(m, cost[:, z, :, 0], cost[:, z, :, 1], pxz[1, z])
        return total
    m = p_xzv.sum(axis=1).reshape(a.shape[0], -1)  # (B, z*v)
    c0 = cost[..., 0].reshape(a.shape[0], -1)
    c1 = cost[..., 1].reshape(a.shape[0], -1)
    return _greedy_two_sink(m, c0, c1, pxz.sum(axis=1)[1])


def _greedy_two_sink(mass: np.ndarray, cost0: np.ndarray, cost1: np.ndarray, demand1: float) -> np.ndarray:
    """Min-cost transport of `mass` (B, W) to two sinks with per-unit costs
    cost/mass and sink-1 demand `demand1`.  cost0/cost1 are already
    mass-weighted (cost of sending the whole mass of w to that sink)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        diff = np.where(mass > 0, (cost1 - cost0) / np.maximum(mass, 1e-300), np.inf)
    order = np.argsort(diff, axis=1)
    m_sorted = np.take_along_axis(mass, order, axis=1)
    d_sorted = np.take_along_axis(np.where(mass > 0, cost1 - cost0, 0.0), order, axis=1)
    cum = np.cumsum(m_sorted, axis=1)
    prev = cum - m_sorted
    take = np.clip(demand1 - prev, 0.0, m_sorted)
    frac = np.where(m_sorted > 0, take / np.maximum(m_sorted, 1e-300), 0.0)
    return cost0.sum(axis=1) + (frac * d_sorted).sum(axis=1)


def _inner_lp(ob: _Objective, p_xzv: np.ndarray) -> tuple[bool, np.ndarray | None, float]:
    """Min distortion over the output kernel subject to realism equality.

    Returns (feasible at q.delta, kernel rows or None, optimal distortion).
    """
    q = ob.q
    nx, nz, nv = p_xzv.shape
    ny = ob.ny
    p_zv = p_xzv.sum(axis=0)
    nrows = nz * nv
    nvar = nrows * ny
    c = np.einsum("xzv,xy->zvy", p_xzv, q.d.values).reshape(nvar)
    a_eq = []
    b_eq = []
    for i in range(nrows):
        row = np.zeros(nvar)
        row[i * ny : (i + 1) * ny] = 1.0
        a_eq.append(row)
        b_eq.append(1.0)
    if q.setting.realism == "joint":
        for y in range(ny):
            for z in range(nz):
                row = np.zeros((nz, nv, ny))
                row[z, :, y] = p_zv[z, :]
                a_eq.append(row.reshape(-1))
                b_eq.append(ob.p_xz[y, z])
    else:
        px = ob.p_xz.sum(axis=1)
        for y in range(ny):
            row = np.zeros((nz, nv, ny))
            row[:, :, y] = p_zv
            a_eq.append(row.reshape(-1))
            b_eq.append(px[y])
    res = linprog(c, A_eq=np.array(a_eq), b_eq=np.array(b_eq), bounds=(0, 1), method="highs")
    if not res.success:
        return False, None, math.inf
    rows = res.x.reshape(nrows, ny)
    return float(res.fun) <= q.delta + 1e-9, rows, float(res.fun)


def _inner_min_sum(ob: _Objective, a_rows: np.ndarray, b_init: np.ndarray) -> tuple[float, np.ndarray] | None:
    """For a fixed first kernel, minimize the sum bound over the output
    kernel subject to realism equality and the distortion cap."""
    q = ob.q
    na = a_rows.size

    def full(brows):
        return np.concatenate([a_rows.reshape(-1), brows.reshape(-1)])

    def sum_bound(bflat):
        t = ob.tensor(full(bflat))
        _, s = _bounds_from_tensor(t, q.setting)
        return s

    def realism(bflat):
        t = ob.tensor(full(bflat))
        if q.setting.realism == "joint":
            return (t.sum(axis=(0, 2)).T - ob.p_xz).reshape(-1)
        return t.sum(axis=(0, 1, 2)) - ob.p_xz.sum(axis=1)

    def dist_slack(bflat):
        t = ob.tensor(full(bflat))
        return q.delta - float((t.sum(axis=(1, 2)) * q.d.values).sum())

    def rows_sum(bflat):
        return bflat.reshape(ob.rb, ob.ny).sum(axis=1) - 1.0

    cons = [
        {"type": "eq", "fun": rows_sum},
        {"type": "eq", "fun": realism},
        {"type": "ineq", "fun": dist_slack},
    ]
    res = minimize(
        sum_bound,
        b_init.reshape(-1),
        method="SLSQP",
        bounds=[(0.0, 1.0)] * (ob.rb * ob.ny),
        constraints=cons,
        options={"maxiter": 120, "ftol": 1e-10},
    )
    if not np.all(np.isfinite(res.x)):
        return None
    b = np.clip(res.x.reshape(ob.rb, ob.ny), 0.0, None)
    b = b / b.sum(axis=1, keepdims=True)
    obj, gap, dist, s = ob.raw(full(b))
    if gap > 1e-6 or dist > q.delta + 1e-6:
        return None
    return s, b


def brute_force_min_rate(
    q: RegionQuery,
    mesh_limit: int = 4_000_000,
    walk_limit: int = 4000,
    refine: bool = True,
) -> RatePoint:
    """Independent mesh oracle for min_rate.

    Meshes the auxiliary kernel on a simplex grid (step >= 1/32, chosen so
    the mesh stays under `mesh_limit` points), sorts mesh points by the rate
    bound, and walks them in increasing order.  At each point the output
    kernel is optimized exactly: a linear program when CR is unlimited (the
    objective then only depends on the auxiliary kernel), an
    equality-constrained minimization of the sum bound otherwise.  The best
    mesh point is locally refined with the polish stage.
    """
    ob = _Objective(q)
    n_rows = ob.ra
    grid = None
    step_k = None
    for k in (32, 16, 12, 8, 6, 4, 3, 2):
        g = _simplex_grid(ob.nv, k)
        if len(g) ** n_rows <= mesh_limit:
            grid, step_k = g, k
            break
    if grid is None:
        raise CapExceeded("no mesh step >= 1/32 fits under the mesh limit")
    s = len(grid)
    total = s**n_rows  # bounded by mesh_limit, the oracle's own budget

    # rate bound (and, for binary outputs, the realism-constrained
    # distortion floor) for every mesh combo, in chunks
    r_all = np.empty(total)
    feas_all = np.ones(total, dtype=bool) if ob.ny == 2 else None
    chunk = 200_000
    radix = s ** np.arange(n_rows - 1, -1, -1)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        choices = (idx[:, None] // radix[None, :]) % s
        r_all[idx] = _batch_rate_bound(ob, grid, choices)
        if feas_all is not None:
            floors = _batch_min_distortion_ny2(ob, grid, choices)
            feas_all[idx] = floors <= q.delta + 1e-9
    order = np.argsort(r_all, kind="stable")

    unlimited = math.isinf(q.r_c)
    best_obj = math.inf
    best_x = None
    starts: list[np.ndarray] = []
    walked = 0
    for pos in order:
        r1 = r_all[pos]
        if r1 >= best_obj - 1e-12 and len(starts) >= 12:
            break
        if feas_all is not None and not feas_all[pos]:
            continue
        if walked >= walk_limit:
            break
        walked += 1
        choice = (pos // radix) % s
        a = grid[choice]
        if ob.z_irrelevant:
            e = np.broadcast_to(a[:, None, :], (ob.nx, ob.nz, ob.nv))
        else:
            e = a.reshape(ob.nx, ob.nz, ob.nv)
        p_xzv = ob.p_xz[:, :, None] * e
        ok, b_rows, lp_dist = _inner_lp(ob, p_xzv)
        if not ok:
            continue
        if unlimited:
            obj = r1
            x = np.concatenate([a.reshape(-1), b_rows.reshape(-1)])
        else:
            inner = _inner_min_sum(ob, a, b_rows)
            if inner is None:
                continue
            s_min, b_opt = inner
            obj = max(r1, s_min - q.r_c)
            x = np.concatenate([a.reshape(-1), b_opt.reshape(-1)])
        if obj < best_obj:
            best_obj = obj
            best_x = x
        starts.append(x)
        if unlimited and len(starts) >= 12:
            break  # sorted walk: the mesh minimum is among the first feasibles
    if best_x is None:
        raise InfeasibleError("oracle found no feasible mesh point")

    diag = {"mesh_step": f"1/{step_k}", "mesh_points": int(total), "walked": walked}
    if refine:
        uniform = np.concatenate(
            [np.full(ob.ra * ob.nv, 1.0 / ob.nv), np.full(ob.rb * ob.ny, 1.0 / ob.ny)]
        )
        seeds = [(s0, blend) for s0 in starts[:12] for blend in (0.0, 0.1)]
        seeds += [(best_x, 0.3)]
        for s0, blend in seeds:
            x = (1.0 - blend) * s0 + blend * uniform
            for _ in range(3):
                polished = _slsqp_polish(ob, x)
                if polished is None:
                    break
                obj, gap, dist, _ = ob.raw(polished)
                if gap <= FEAS_TOL and dist <= q.delta + FEAS_TOL and obj < best_obj - 1e-10:
                    best_obj, best_x = obj, polished
                    x = polished
                else:
                    break
    return _rate_point(ob, best_x, converged=True, extra=diag)


# ---------------------------------------------------------------------------
# common component and classical baselines


def common_component(p_xz: JointPmf) -> dict:
    """Maximal common part of (X, Z): labels phi over x and psi over z from
    the connected components of the bipartite support graph, plus whether
    the chain X - phi(X) - Z holds (the dependence is fully explained)."""
    pxz = p_xz.tensor
    nx, nz = pxz.shape
    adj = np.zeros((nx + nz, nx + nz))
    adj[:nx, nx:] = pxz > 0
    adj[nx:, :nx] = pxz.T > 0
    n_comp, labels = connected_components(adj, directed=False)
    phi = labels[:nx]
    psi = labels[nx:]
    # I(X; Z | phi(X)) via the joint over (x, z, component)
    k = int(labels.max()) + 1
    t = np.zeros((nx, nz, k))
    for x in range(nx):
        t[x, :, phi[x]] = pxz[x, :]
    j = JointPmf(("x", "z", "c"), t)
    cmi = conditional_mutual_information(j, "x", "z", "c")
    return {
        "n_components": int(n_comp),
        "phi": phi.tolist(),
        "psi": psi.tolist(),
        "nontrivial": int(n_comp) > 1,
        "markov_through_common": cmi < 1e-9,
        "residual_cmi": float(cmi),
    }


def _blahut_arimoto(px: np.ndarray, d: np.ndarray, beta: float, iters: int = 400) -> tuple[float, float]:
    """Rate (bits) and distortion on the slope-beta point of the classical
    rate-distortion curve of px."""
    ny = d.shape[1]
    qy = np.full(ny, 1.0 / ny)
    e = np.exp(-beta * d)
    for _ in range(iters):
        w = qy[None, :] * e
        w_sum = w.sum(axis=1, keepdims=True)
        w = w / w_sum
        qy_new = px @ w
        if np.abs(qy_new - qy).max() < 1e-13:
            qy = qy_new
            break
        qy = qy_new
    w = qy[None, :] * e
    w = w / w.sum(axis=1, keepdims=True)
    pxy = px[:, None] * w
    dist = float((pxy * d).sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(pxy > 0, w / np.maximum(qy[None, :], 1e-300), 1.0)
        rate = float((xlogy(pxy, ratio)).sum() / _LN2)
    return max(rate, 0.0), dist


def classical_baseline(
    p_xz: JointPmf, d: DistortionMatrix, delta: float, mode: str = "conditional", **opt
) -> float:
    """Reference rates without any realism constraint.

    mode='conditional': rate-distortion with side information at both
    terminals, min I(X;Y|Z) s.t. E[d] <= delta, via per-z Blahut-Arimoto
    with a common slope tuned by bisection.
    mode='wyner-ziv': decoder-only side information, via the same optimizer
    machinery with the realism constraint dropped.
    """
    pxz = p_xz.tensor
    if mode == "conditional":
        pz = pxz.sum(axis=0)
        conds = [(pz[z], pxz[:, z] / pz[z]) for z in range(pxz.shape[1]) if pz[z] > 0]
        lo, hi = 0.0, 1.0
        def total(beta):
            r = sum(w * _blahut_arimoto(px, d.values, beta)[0] for w, px in conds)
            dd = sum(w * _blahut_arimoto(px, d.values, beta)[1] for w, px in conds)
            return r, dd
        r, dd = total(hi)
        while dd > delta and hi < 1e6:
            hi *= 2.0
            r, dd = total(hi)
        if dd > delta:
            raise InfeasibleError("delta below the zero-distortion floor")
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            r, dd = total(mid)
            if dd > delta:
                lo = mid
            else:
                hi = mid
        return total(hi)[0]
    if mode == "wyner-ziv":
        return _wyner_ziv_rate(p_xz, d, delta, **opt)
    raise ValueError(f"unknown baseline mode {mode!r}")


def _wyner_ziv_rate(p_xz: JointPmf, d: DistortionMatrix, delta: float, restarts: int = 16, seed: int = 0) -> float:
    """min I(X;V) - I(Z;V) s.t. E[d(X, Y)] <= delta with Y = output of a
    decoder kernel on (Z, V); no realism constraint."""
    q = RegionQuery(
        p_xz=p_xz,
        d=d,
        setting=Setting("decoder", "marginal"),
        delta=delta,
        r_c=math.inf,
        restarts=restarts,
        seed=seed,
    )
    ob = _Objective(q)
    rng = np.random.default_rng(seed)
    best = math.inf

    def dist_slack(x):
        t = ob.tensor(x)
        return delta - float((t.sum(axis=(1, 2)) * d.values).sum())

    def rate(x):
        t = ob.tensor(x)
        r, _ = _bounds_from_tensor(t, q.setting)
        return r

    def rows_sum(x):
        a, b = ob.split(x)
        return np.concatenate([a.sum(axis=1) - 1.0, b.sum(axis=1) - 1.0])

    n = (ob.ra * ob.nv) + (ob.rb * ob.ny)
    for _ in range(restarts):
        x0 = _random_start(ob, rng)
        res = minimize(
            rate,
            x0,
            method="SLSQP",
            bounds=[(0.0, 1.0)] * n,
            constraints=[
                {"type": "eq", "fun": rows_sum},
                {"type": "ineq", "fun": dist_slack},
            ],
            options={"maxiter": 200, "ftol": 1e-12},
        )
        if not np.all(np.isfinite(res.x)):
            continue
        a, b = ob.split(np.clip(res.x, 0.0, None))
        a = a / a.sum(axis=1, keepdims=True)
        b = b / b.sum(axis=1, keepdims=True)
        x = np.concatenate([a.reshape(-1), b.reshape(-1)])
        if dist_slack(x) >= -FEAS_TOL:
            best = min(best, rate(x))
    if not math.isfinite(best):
        raise InfeasibleError("wyner-ziv baseline found no feasible point")
    return max(best, 0.0)


def candidate_from_kernels(
    p_xz: JointPmf, enc: Kernel, dec: Kernel, z_irrelevant: bool = False
) -> Candidate:
    return Candidate(joint_from_parts(p_xz, enc, dec, z_irrelevant=z_irrelevant))
