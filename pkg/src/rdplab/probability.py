"""Exact finite-alphabet probability algebra.

Distributions are dense numpy arrays over named axes.  All information
quantities use base-2 logarithms with the convention 0*log(0) = 0.  Validity
checks are strict (tolerance 1e-12) and nothing is silently renormalized:
an invalid pmf raises instead of being patched up.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

PMF_TOL = 1e-12

_DEFAULT_CAP = 2**20


def enumeration_cap() -> int:
    """Size cap for dense enumeration, overridable via RDPLAB_CAP."""
    raw = os.environ.get("RDPLAB_CAP")
    if raw is None:
        return _DEFAULT_CAP
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ValueError(f"RDPLAB_CAP must be an integer, got {raw!r}") from exc
    if cap <= 0:
        raise ValueError("RDPLAB_CAP must be positive")
    return cap


class CapExceeded(RuntimeError):
    """Raised when a dense enumeration would exceed the configured cap."""


def check_cap(n_states: int, what: str = "enumeration") -> None:
    cap = enumeration_cap()
    if n_states > cap:
        raise CapExceeded(f"{what} needs {n_states} states, cap is {cap}")


def _validate_probs(a: np.ndarray, what: str) -> None:
    if np.any(a < -PMF_TOL):
        raise ValueError(f"{what} has negative entries (min {a.min():.3e})")
    s = float(a.sum())
    if abs(s - 1.0) > PMF_TOL * max(1, a.size):
        raise ValueError(f"{what} sums to {s!r}, not 1")


@dataclass(frozen=True)
class Pmf:
    """Probability mass function on {0, ..., size-1}."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", p)
        if p.ndim != 1:
            raise ValueError("Pmf needs a 1-d array")
        _validate_probs(p, "pmf")

    @property
    def size(self) -> int:
        return self.probs.shape[0]

    def to_json(self) -> dict:
        return {
            "axes": [{"name": "x", "size": self.size}],
            "data": [float(v) for v in self.probs],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Pmf":
        axes = obj["axes"]
        if len(axes) != 1:
            raise ValueError("Pmf JSON must have exactly one axis")
        data = np.asarray(obj["data"], dtype=float)
        if data.size != axes[0]["size"]:
            raise ValueError("data length does not match axis size")
        return cls(data)


@dataclass(frozen=True)
class JointPmf:
    """Joint pmf over named finite axes, stored as a dense tensor."""

    names: tuple
    tensor: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.tensor, dtype=float)
        names = tuple(self.names)
        object.__setattr__(self, "tensor", t)
        object.__setattr__(self, "names", names)
        if t.ndim != len(names):
            raise ValueError("axis names do not match tensor rank")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate axis names in {names}")
        check_cap(t.size, "joint pmf")
        _validate_probs(t, f"joint pmf over {names}")

    @property
    def sizes(self) -> tuple:
        return self.tensor.shape

    def axis(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no axis named {name!r} in {self.names}") from None

    def marginal(self, keep) -> "JointPmf":
        keep = tuple(keep)
        idx = [self.axis(n) for n in keep]
        drop = tuple(i for i in range(self.tensor.ndim) if i not in idx)
        t = self.tensor.sum(axis=drop) if drop else self.tensor
        # sum() collapses axes; restore requested order
        remaining = [n for n in self.names if n in keep]
        perm = [remaining.index(n) for n in keep]
        return JointPmf(keep, np.transpose(t, perm))

    def to_pmf(self, name: str) -> Pmf:
        return Pmf(self.marginal((name,)).tensor)

    def permute(self, order) -> "JointPmf":
        order = tuple(order)
        perm = [self.axis(n) for n in order]
        return JointPmf(order, np.transpose(self.tensor, perm))

    def to_json(self) -> dict:
        return {
            "axes": [
                {"name": n, "size": int(s)} for n, s in zip(self.names, self.sizes)
            ],
            "data": [float(v) for v in self.tensor.reshape(-1)],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "JointPmf":
        names = tuple(a["name"] for a in obj["axes"])
        shape = tuple(int(a["size"]) for a in obj["axes"])
        data = np.asarray(obj["data"], dtype=float)
        if data.size != int(np.prod(shape)):
            raise ValueError("data length does not match axis sizes")
        return cls(names, data.reshape(shape))


@dataclass(frozen=True)
class Kernel:
    """Conditional pmf: rows[i] is a pmf on the output alphabet.

    Rows whose input never occurs may be marked unconstrained; they are kept
    as uniform placeholders so every row is still a valid pmf.
    """

    rows: np.ndarray
    unconstrained: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        r = np.asarray(self.rows, dtype=float)
        object.__setattr__(self, "rows", r)
        object.__setattr__(self, "unconstrained", frozenset(self.unconstrained))
        if r.ndim != 2:
            raise ValueError("Kernel needs a 2-d array")
        for i in range(r.shape[0]):
            _validate_probs(r[i], f"kernel row {i}")

    @property
    def input_size(self) -> int:
        return self.rows.shape[0]

    @property
    def output_size(self) -> int:
        return self.rows.shape[1]

    @classmethod
    def from_conditional(cls, joint: np.ndarray) -> "Kernel":
        """Normalize a nonnegative (input, output) table row-wise.

        Null input rows (zero mass) become uniform and are flagged.
        """
        j = np.asarray(joint, dtype=float)
        totals = j.sum(axis=1)
        rows = np.empty_like(j)
        flagged = []
        for i, s in enumerate(totals):
            if s <= 0.0:
                rows[i] = 1.0 / j.shape[1]
                flagged.append(i)
            else:
                rows[i] = j[i] / s
        return cls(rows, frozenset(flagged))

    def to_json(self) -> dict:
        return {
            "axes": [
                {"name": "in", "size": self.input_size},
                {"name": "out", "size": self.output_size},
            ],
            "data": [float(v) for v in self.rows.reshape(-1)],
            "unconstrained": sorted(self.unconstrained),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Kernel":
        shape = tuple(int(a["size"]) for a in obj["axes"])
        data = np.asarray(obj["data"], dtype=float).reshape(shape)
        return cls(data, frozenset(obj.get("unconstrained", ())))


@dataclass(frozen=True)
class DistortionMatrix:
    """Single-letter distortion d(x, y) >= 0."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 2:
            raise ValueError("distortion matrix must be 2-d")
        if np.any(v < 0):
            raise ValueError("distortion values must be nonnegative")

    @property
    def d_max(self) -> float:
        return float(self.values.max())

    @classmethod
    def hamming(cls, size: int) -> "DistortionMatrix":
        return cls(1.0 - np.eye(size))

    @classmethod
    def squared_embedded(cls, values) -> "DistortionMatrix":
        a = np.asarray(values, dtype=float)
        return cls((a[:, None] - a[None, :]) ** 2)

    def to_json(self) -> dict:
        return {
            "axes": [
                {"name": "x", "size": self.values.shape[0]},
                {"name": "y", "size": self.values.shape[1]},
            ],
            "data": [float(v) for v in self.values.reshape(-1)],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DistortionMatrix":
        shape = tuple(int(a["size"]) for a in obj["axes"])
        return cls(np.asarray(obj["data"], dtype=float).reshape(shape))


# ---------------------------------------------------------------------------
# information measures


def entropy_bits(p: np.ndarray) -> float:
    """H(p) in bits; accepts any nonnegative array summing to 1."""
    a = np.asarray(p, dtype=float).reshape(-1)
    return float(-xlogy(a, a).sum() / math.log(2))


def entropy(p) -> float:
    if isinstance(p, Pmf):
        return entropy_bits(p.probs)
    if isinstance(p, JointPmf):
        return entropy_bits(p.tensor)
    return entropy_bits(np.asarray(p))


def mutual_information(j: JointPmf, a: str, b: str) -> float:
    """I(A;B) in bits, where A and B may each be a group of axes."""
    av = (a,) if isinstance(a, str) else tuple(a)
    bv = (b,) if isinstance(b, str) else tuple(b)
    ha = entropy(j.marginal(av))
    hb = entropy(j.marginal(bv))
    hab = entropy(j.marginal(av + bv))
    return ha + hb - hab


def conditional_mutual_information(j: JointPmf, a, b, given) -> float:
    """I(A;B|C) = H(A,C) + H(B,C) - H(C) - H(A,B,C), in bits."""
    av = (a,) if isinstance(a, str) else tuple(a)
    bv = (b,) if isinstance(b, str) else tuple(b)
    cv = (given,) if isinstance(given, str) else tuple(given)
    hac = entropy(j.marginal(av + cv))
    hbc = entropy(j.marginal(bv + cv))
    hc = entropy(j.marginal(cv))
    habc = entropy(j.marginal(av + bv + cv))
    return hac + hbc - hc - habc


def conditional_entropy(j: JointPmf, a, given) -> float:
    """H(A|C) in bits."""
    av = (a,) if isinstance(a, str) else tuple(a)
    cv = (given,) if isinstance(given, str) else tuple(given)
    return entropy(j.marginal(av + cv)) - entropy(j.marginal(cv))


def tv_distance(p, q) -> float:
    """Total variation distance, 0.5 * L1."""
    pa = p.tensor if isinstance(p, JointPmf) else p.probs if isinstance(p, Pmf) else np.asarray(p, float)
    qa = q.tensor if isinstance(q, JointPmf) else q.probs if isinstance(q, Pmf) else np.asarray(q, float)
    if pa.shape != qa.shape:
        raise ValueError(f"shape mismatch {pa.shape} vs {qa.shape}")
    return 0.5 * float(np.abs(pa - qa).sum())


# ---------------------------------------------------------------------------
# structural operations


def product_power(j: JointPmf, n: int, sep: str = "") -> JointPmf:
    """n-fold iid product; axis names gain position suffixes 1..n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    check_cap(j.tensor.size**n, "product power")
    t = j.tensor
    out = t
    for _ in range(n - 1):
        out = np.multiply.outer(out, t)
    names = tuple(f"{nm}{sep}{t_i}" for t_i in range(1, n + 1) for nm in j.names)
    return JointPmf(names, out)


def average_empirical(jn: JointPmf, n: int) -> JointPmf:
    """Average of the n per-position pair marginals of a block joint.

    The block joint must have 2n axes ordered (a_1, b_1, ..., a_n, b_n); the
    result is a single-letter joint over (a, b).
    """
    if len(jn.names) != 2 * n:
        raise ValueError(f"expected {2*n} axes, got {len(jn.names)}")
    acc = None
    for t in range(n):
        a, b = jn.names[2 * t], jn.names[2 * t + 1]
        m = jn.marginal((a, b)).tensor
        acc = m if acc is None else acc + m
    return JointPmf(("a", "b"), acc / n)


def expected_distortion(j: JointPmf, d: DistortionMatrix, a: str = "x", b: str = "y") -> float:
    """E[d(A, B)] under the (A, B) marginal of j."""
    m = j.marginal((a, b)).tensor
    if m.shape != d.values.shape:
        raise ValueError("distortion matrix shape does not match marginal")
    return float((m * d.values).sum())


def block_expected_distortion(jn: JointPmf, d: DistortionMatrix, n: int) -> float:
    """Per-letter average E[(1/n) sum_t d(A_t, B_t)] for a 2n-axis block joint."""
    avg = average_empirical(jn, n)
    return float((avg.tensor * d.values).sum())


def kernel_compose(j: JointPmf, k: Kernel, input_axis: str, new_axis: str) -> JointPmf:
    """Extend j with a new axis drawn from k applied to input_axis."""
    i = j.axis(input_axis)
    if j.sizes[i] != k.input_size:
        raise ValueError("kernel input size does not match axis")
    check_cap(j.tensor.size * k.output_size, "kernel composition")
    t = np.moveaxis(j.tensor, i, -1)
    out = t[..., :, None] * k.rows  # broadcast over output
    out = np.moveaxis(out, -2, i)  # input axis back in place, new axis last
    return JointPmf(j.names + (new_axis,), out)


def condition(j: JointPmf, axis: str, value: int) -> JointPmf:
    """Conditional joint given axis == value; raises on a null event."""
    i = j.axis(axis)
    sl = np.take(j.tensor, value, axis=i)
    mass = sl.sum()
    if mass <= 0.0:
        raise ValueError(f"conditioning on null event {axis}={value}")
    names = j.names[:i] + j.names[i + 1 :]
    return JointPmf(names, sl / mass)


def conditional_kernel(j: JointPmf, inputs, output: str) -> Kernel:
    """Kernel from a group of input axes (row-major flattened) to one output axis."""
    iv = (inputs,) if isinstance(inputs, str) else tuple(inputs)
    m = j.marginal(iv + (output,)).tensor
    flat = m.reshape(-1, m.shape[-1])
    return Kernel.from_conditional(flat)


def joint_from_parts(p_xz: JointPmf, enc: Kernel, dec: Kernel, z_irrelevant: bool = False) -> JointPmf:
    """Assemble the (x, z, v, y) joint from p_xz and two kernels.

    enc rows are indexed by x (when z_irrelevant, enforcing the chain
    Z - X - V) or row-major by (x, z).  dec rows are row-major by (z, v), so
    the chain X - (Z, V) - Y holds by construction.
    """
    nx, nz = p_xz.sizes
    nv = enc.output_size
    ny = dec.output_size
    if z_irrelevant:
        if enc.input_size != nx:
            raise ValueError("encoder kernel must have one row per x value")
        e = np.broadcast_to(enc.rows[:, None, :], (nx, nz, nv))
    else:
        if enc.input_size != nx * nz:
            raise ValueError("encoder kernel must have one row per (x, z) pair")
        e = enc.rows.reshape(nx, nz, nv)
    if dec.input_size != nz * nv:
        raise ValueError("decoder kernel must have one row per (z, v) pair")
    d = dec.rows.reshape(nz, nv, ny)
    t = p_xz.tensor[:, :, None, None] * e[:, :, :, None] * d[None, :, :, :]
    return JointPmf(("x", "z", "v", "y"), t)


def load_json(path):
    with open(path) as f:
        return json.load(f)
