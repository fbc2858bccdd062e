"""Finite-blocklength random-codebook simulator.

Two scheme families over a single-letter candidate law p(x, z, v, y):

* mode "ed" (side information at both terminals): one codebook per side
  information sequence z^n, with floor(2^{n(r+eps)}) * floor(2^{n r_c})
  codewords drawn iid from prod_t p(v | z_t), indexed by a message and a
  common-randomness index.  The encoder is a likelihood encoder (posterior
  over the message given x^n under the synthesis distribution); the decoder
  emits y_t ~ p(y | z_t, v_t).

* mode "d" (side information at the decoder only): a single flat codebook
  drawn iid from p(v), indexed by (message, virtual message, CR index).  The
  virtual message is not transmitted; the decoder recovers it by joint
  letter-frequency typicality of the codeword with z^n.

``exact_analysis`` enumerates the induced joint law at small blocklengths:
the synthesized output marginal, its distance to the iid target, the
distance between the operational code and the idealized synthesis reference
(equal to the total variation of their (index, x^n, z^n) marginals), and
exact distortions.  ``run_experiment`` estimates the same quantities by
sampling at blocklengths where enumeration is out of reach.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .probability import (
    DistortionMatrix,
    JointPmf,
    check_cap,
    mutual_information,
)
from .regions import Candidate

DEFAULT_EPS = 0.05
DEFAULT_EPS_TYP = 0.1


def _seq_tuples(alphabet: int, n: int) -> np.ndarray:
    """All sequences of length n over {0..alphabet-1}, shape (alphabet^n, n)."""
    idx = np.arange(alphabet**n)
    radix = alphabet ** np.arange(n - 1, -1, -1)
    return (idx[:, None] // radix[None, :]) % alphabet


def _prod_over_positions(table: np.ndarray, seqs: np.ndarray) -> np.ndarray:
    """prod_t table[seqs[..., t], t] for a (alphabet, n) table."""
    return np.prod(table[seqs, np.arange(seqs.shape[-1])], axis=-1)


@dataclass
class SchemeSpec:
    mode: str  # "ed" or "d"
    n: int
    rate: float
    cr_rate: float
    candidate: Candidate
    epsilon: float = DEFAULT_EPS
    eps_typ: float = DEFAULT_EPS_TYP
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("ed", "d"):
            raise ValueError("mode must be 'ed' or 'd'")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.rate < 0 or self.cr_rate < 0 or self.epsilon <= 0:
            raise ValueError("rates must be nonnegative and epsilon positive")
        t = self.candidate.joint.tensor
        self.nx, self.nz, self.nv, self.ny = t.shape
        # single-letter kernels of the candidate
        p_zv = t.sum(axis=(0, 3))
        self.p_z = p_zv.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.p_v_given_z = np.where(
                self.p_z[:, None] > 0, p_zv / np.maximum(self.p_z[:, None], 1e-300), 1.0 / self.nv
            )
        p_xzv = t.sum(axis=3)
        denom = np.maximum(p_zv[None, :, :], 1e-300)
        self.p_x_given_zv = np.where(p_zv[None, :, :] > 0, p_xzv / denom, 1.0 / self.nx)
        p_zvy = t.sum(axis=0)
        self.p_y_given_zv = np.where(
            p_zv[:, :, None] > 0, p_zvy / np.maximum(p_zv[:, :, None], 1e-300), 1.0 / self.ny
        )
        self.p_xz = t.sum(axis=(2, 3))
        self.p_v = p_zv.sum(axis=0)
        self.p_vz = p_zv.T  # (v, z)
        p_xv = t.sum(axis=(1, 3))
        self.p_x_given_v = np.where(
            self.p_v[None, :] > 0, p_xv / np.maximum(self.p_v[None, :], 1e-300), 1.0 / self.nx
        )
        self.m_count = max(1, int(2 ** (self.n * (self.rate + self.epsilon))))
        self.j_count = max(1, int(2 ** (self.n * self.cr_rate)))
        if self.mode == "d":
            i_zv = mutual_information(self.candidate.joint, "z", "v")
            if i_zv <= 1e-12:
                self.r_prime = 0.0
            else:
                self.r_prime = i_zv - min(self.epsilon, i_zv) / 2.0
            self.mp_count = max(1, int(2 ** (self.n * self.r_prime)))
        else:
            self.r_prime = 0.0
            self.mp_count = 1


@dataclass
class Codebook:
    spec: SchemeSpec
    codebook_seed: int
    # ed: (nz^n, m, j, n); d: (m, mp, j, n)
    words: np.ndarray


@dataclass
class TrialResult:
    distortion: float
    mprime_error: bool
    flagged: bool


@dataclass
class ExperimentReport:
    n_trials: int
    mean_distortion: float
    ci95: float
    mprime_error_rate: float
    flagged_trials: int
    seed: int


@dataclass
class InducedCode:
    """Exact induced joint law over (x^n, z^n, w, y^n) with w the full index
    (message, CR index, and in mode 'd' the decoded virtual message)."""

    joint: JointPmf
    n: int
    nx: int
    nz: int
    ny: int
    meta: dict = field(default_factory=dict)


def _sample_rows(rng: np.random.Generator, rows: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """Sample one output per input index from a row-stochastic table."""
    u = rng.random(inputs.shape)
    cdf = np.cumsum(rows[inputs], axis=-1)
    return (u[..., None] > cdf).sum(axis=-1)


def build_codebook(spec: SchemeSpec, codebook_seed: int = 0) -> Codebook:
    rng = np.random.default_rng((spec.seed, codebook_seed, 0xC0DE))
    n = spec.n
    if spec.mode == "ed":
        n_zn = spec.nz**n
        check_cap(n_zn * spec.m_count * spec.j_count * n, "codebook")
        zseqs = _seq_tuples(spec.nz, n)  # (n_zn, n)
        # per position t, codewords drawn from p(v | z_t)
        probs = spec.p_v_given_z[zseqs]  # (n_zn, n, nv)
        u = rng.random((n_zn, spec.m_count, spec.j_count, n))
        cdf = np.cumsum(probs, axis=-1)[:, None, None, :, :]
        words = (u[..., None] > cdf).sum(axis=-1).astype(np.int8)
        return Codebook(spec, codebook_seed, words)
    check_cap(spec.m_count * spec.mp_count * spec.j_count * n, "codebook")
    u = rng.random((spec.m_count, spec.mp_count, spec.j_count, n))
    cdf = np.cumsum(spec.p_v)
    words = (u[..., None] > cdf[None, None, None, None, :]).sum(axis=-1).astype(np.int8)
    return Codebook(spec, codebook_seed, words)


def likelihood_encode(
    cb: Codebook, x_seq: np.ndarray, z_seq: np.ndarray, j: int, rng: np.random.Generator
) -> tuple[tuple, bool]:
    """Sample the transmitted index from the likelihood-encoder posterior.

    Returns ((m,) or (m, m_prime), flagged) — flagged when the posterior had
    no support and fell back to uniform.
    """
    spec = cb.spec
    post, flagged = _encoder_posterior(cb, x_seq, z_seq, j)
    flat = rng.choice(post.size, p=post.reshape(-1))
    if spec.mode == "ed":
        return (int(flat),), flagged
    return (int(flat // spec.mp_count), int(flat % spec.mp_count)), flagged


def _encoder_posterior(cb: Codebook, x_seq: np.ndarray, z_seq: np.ndarray, j: int):
    spec = cb.spec
    n = spec.n
    if spec.mode == "ed":
        zi = int(np.dot(z_seq, spec.nz ** np.arange(n - 1, -1, -1)))
        words = cb.words[zi, :, j, :]  # (m, n)
        like = spec.p_x_given_zv[x_seq[None, :], z_seq[None, :], words]
        w = like.prod(axis=1)
    else:
        words = cb.words[:, :, j, :]  # (m, mp, n)
        like = spec.p_x_given_v[x_seq[None, None, :], words]
        w = like.prod(axis=2)
    total = w.sum()
    if total <= 0.0:
        return np.full(w.shape, 1.0 / w.size), True
    return w / total, False


def decode_virtual(cb: Codebook, m: int, j: int, z_seq: np.ndarray) -> tuple[int, bool]:
    """Recover the virtual message by joint letter-frequency typicality of
    the sub-codebook words with z^n; returns (index, success)."""
    spec = cb.spec
    n = spec.n
    words = cb.words[m, :, j, :]  # (mp, n)
    counts = np.zeros((spec.mp_count, spec.nv, spec.nz))
    for t in range(n):
        np.add.at(counts, (np.arange(spec.mp_count), words[:, t], z_seq[t]), 1.0)
    types = counts / n
    dev = np.abs(types - spec.p_vz[None, :, :]).max(axis=(1, 2))
    support_ok = ~((types > 0) & (spec.p_vz[None, :, :] <= 0)).any(axis=(1, 2))
    typical = (dev <= spec.eps_typ) & support_ok
    hits = np.flatnonzero(typical)
    if hits.size == 1:
        return int(hits[0]), True
    return (int(hits[0]) if hits.size else 0), False


def synthesize_output(
    spec: SchemeSpec, z_seq: np.ndarray, v_seq: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """y_t ~ p(y | z_t, v_t)."""
    u = rng.random(spec.n)
    cdf = np.cumsum(spec.p_y_given_zv[z_seq, v_seq], axis=-1)
    return (u[:, None] > cdf).sum(axis=-1)


def run_experiment(
    cb: Codebook, d: DistortionMatrix, n_trials: int, seed: int = 0
) -> ExperimentReport:
    """Sample the full code end to end and estimate the per-letter distortion
    (and in mode 'd' the virtual-message decoding error rate)."""
    spec = cb.spec
    rng = np.random.default_rng((spec.seed, cb.codebook_seed, seed, 0x7121A7))
    n = spec.n
    pxz_flat = spec.p_xz.reshape(-1)
    dist = np.empty(n_trials)
    errors = 0
    flagged = 0
    for i in range(n_trials):
        pairs = rng.choice(pxz_flat.size, size=n, p=pxz_flat)
        x_seq, z_seq = pairs // spec.nz, pairs % spec.nz
        j = int(rng.integers(spec.j_count))
        idx, flag = likelihood_encode(cb, x_seq, z_seq, j, rng)
        flagged += flag
        if spec.mode == "ed":
            zi = int(np.dot(z_seq, spec.nz ** np.arange(n - 1, -1, -1)))
            v_seq = cb.words[zi, idx[0], j, :]
        else:
            m, m_prime = idx
            m_hat, ok = decode_virtual(cb, m, j, z_seq)
            errors += m_hat != m_prime
            v_seq = cb.words[m, m_hat, j, :]
        y_seq = synthesize_output(spec, z_seq, v_seq, rng)
        dist[i] = d.values[x_seq, y_seq].mean()
    mean = float(dist.mean())
    ci = 1.96 * float(dist.std(ddof=1)) / math.sqrt(n_trials) if n_trials > 1 else math.inf
    return ExperimentReport(
        n_trials=n_trials,
        mean_distortion=mean,
        ci95=ci,
        mprime_error_rate=errors / n_trials,
        flagged_trials=flagged,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# exact analysis (mode "ed")


def exact_analysis(cb: Codebook, d: DistortionMatrix | None = None) -> dict:
    """Exact marginals of the induced code at small blocklength (mode 'ed').

    Reports the synthesized output marginal and its TV to the iid source
    law, both for the idealized synthesis reference (uniform indices, x^n
    generated from the codeword) and for the operational code (iid source,
    likelihood encoder); their gap equals the TV between the (j, x^n, z^n)
    marginals, which is also reported.
    """
    spec = cb.spec
    if spec.mode != "ed":
        raise ValueError("exact_analysis covers mode 'ed'")
    n = spec.n
    nxn, nzn, nyn = spec.nx**n, spec.nz**n, spec.ny**n
    m_count, j_count = spec.m_count, spec.j_count
    check_cap(nxn * m_count * j_count, "exact analysis (encoder)")
    check_cap(nzn * m_count * j_count * max(nxn, nyn), "exact analysis")

    xseqs = _seq_tuples(spec.nx, n)
    zseqs = _seq_tuples(spec.nz, n)
    p_z = spec.p_z
    pz_n = _prod_over_positions(np.tile(p_z[:, None], (1, n)), zseqs)
    px_n_target = _prod_over_positions(
        np.tile(spec.p_xz.sum(axis=1)[:, None], (1, n)), xseqs
    )
    # p(x^n, z^n) = prod_t p_xz(x_t, z_t)
    pxz_n = np.empty((nxn, nzn))
    for zi in range(nzn):
        tab = spec.p_xz[:, zseqs[zi]]  # (nx, n): column t fixes z_t
        pxz_n[:, zi] = np.prod(tab[xseqs, np.arange(n)[None, :]], axis=1)

    q1_y = np.zeros(nyn)
    q1_dist = 0.0
    p1_y = np.zeros(nyn)
    p1_dist = 0.0
    tv_idx = 0.0  # TV between the (j, x^n, z^n) marginals of code and reference

    if d is not None:
        # expected distortion per (z, v) under the synthesis pair, and the
        # per-x version for the operational code
        d_zv = np.einsum("xzv,zvy,xy->zv", spec.p_x_given_zv, spec.p_y_given_zv, d.values)
        dy = np.einsum("zvy,xy->xzv", spec.p_y_given_zv, d.values)
    for zi in range(nzn):
        z_seq = zseqs[zi]
        words = cb.words[zi]  # (m, j, n)
        # per-codeword product distribution over y^n
        y_rows = spec.p_y_given_zv[z_seq[None, None, :], words]  # (m, j, n, ny)
        y_prod = np.ones((m_count, j_count, 1))
        for t in range(n):
            y_prod = (y_prod[:, :, :, None] * y_rows[:, :, t, None, :]).reshape(
                m_count, j_count, -1
            )
        x_like = spec.p_x_given_zv[xseqs[:, None, None, :], z_seq[None, None, None, :], words[None]]
        x_prod = x_like.prod(axis=3)  # (nxn, m, j): prod_t p(x_t | z_t, v_t)
        # reference: uniform (m, j), x^n from the codeword
        q1_y += pz_n[zi] * y_prod.sum(axis=(0, 1)) / (m_count * j_count)
        # TV of the (j, x^n, z^n) marginals, reference vs iid source
        q1_xz = pz_n[zi] * x_prod.sum(axis=1) / m_count  # (nxn, j)
        tv_idx += 0.5 * float(np.abs(q1_xz - pxz_n[:, zi][:, None]).sum()) / j_count
        # operational code: likelihood encoder
        totals = x_prod.sum(axis=1, keepdims=True)  # (nxn, 1, j)
        post = np.where(totals > 0, x_prod / np.maximum(totals, 1e-300), 1.0 / m_count)
        weights = pxz_n[:, zi][:, None, None] * post / j_count  # (nxn, m, j)
        p1_y += y_prod.reshape(m_count * j_count, -1).T @ weights.sum(axis=0).reshape(-1)
        if d is not None:
            # d_bar(x^n; m, j) = (1/n) sum_t sum_y p(y | z_t, v_t) d(x_t, y)
            db = dy[xseqs[:, None, None, :], z_seq[None, None, None, :], words[None]].mean(axis=3)
            p1_dist += float((weights * db).sum())
            q1_dist += pz_n[zi] * float(
                d_zv[z_seq[None, None, :], words].mean(axis=2).sum() / (m_count * j_count)
            )
    tv_q1 = 0.5 * float(np.abs(q1_y - px_n_target).sum())
    tv_p1 = 0.5 * float(np.abs(p1_y - px_n_target).sum())
    out = {
        "n": n,
        "m_count": m_count,
        "j_count": j_count,
        "tv_reference_to_target": tv_q1,
        "tv_code_to_target": tv_p1,
        "tv_code_to_reference_indices": float(tv_idx),
        "output_marginal": p1_y,
        "reference_output_marginal": q1_y,
    }
    if d is not None:
        out["distortion_code"] = p1_dist
        out["distortion_reference"] = q1_dist
    return out


def select_codebook(
    spec: SchemeSpec, d: DistortionMatrix | None = None, k: int = 8
) -> tuple[Codebook, dict]:
    """Draw k codebooks and keep the one with the smallest exact distance to
    the target output law (the random-coding argument guarantees most draws
    are good; picking the best of a few makes small n behave)."""
    best = None
    for s in range(k):
        cb = build_codebook(spec, codebook_seed=s)
        rep = exact_analysis(cb, d)
        if best is None or rep["tv_code_to_target"] < best[1]["tv_code_to_target"]:
            best = (cb, rep)
    return best


def exact_induced_code(cb: Codebook, mode_label: str = "") -> InducedCode:
    """Full joint law over (x^n, z^n, (m, j), y^n) of the operational code,
    for blocklengths small enough to enumerate."""
    spec = cb.spec
    if spec.mode != "ed":
        raise ValueError("exact_induced_code covers mode 'ed'")
    n = spec.n
    nxn, nzn, nyn = spec.nx**n, spec.nz**n, spec.ny**n
    m_count, j_count = spec.m_count, spec.j_count
    nw = m_count * j_count
    check_cap(nxn * nzn * nw * nyn, "induced code joint")
    xseqs = _seq_tuples(spec.nx, n)
    zseqs = _seq_tuples(spec.nz, n)
    t = np.zeros((nxn, nzn, nw, nyn))
    for zi in range(nzn):
        z_seq = zseqs[zi]
        tab = spec.p_xz[:, z_seq]  # (nx, n)
        pxz_n = _prod_over_positions(tab, xseqs)  # (nxn,)
        words = cb.words[zi]  # (m, j, n)
        x_like = spec.p_x_given_zv[
            xseqs[:, None, None, :], z_seq[None, None, None, :], words[None]
        ].prod(axis=3)
        totals = x_like.sum(axis=1, keepdims=True)
        post = np.where(totals > 0, x_like / np.maximum(totals, 1e-300), 1.0 / m_count)
        y_rows = spec.p_y_given_zv[z_seq[None, None, :], words]  # (m, j, n, ny)
        y_prod = np.ones((m_count, j_count, 1))
        for tt in range(n):
            y_prod = (y_prod[:, :, :, None] * y_rows[:, :, tt, None, :]).reshape(
                m_count, j_count, -1
            )
        t[:, zi, :, :] = (
            (pxz_n[:, None, None] * post / j_count)[..., None] * y_prod[None]
        ).reshape(nxn, nw, nyn)
    joint = JointPmf(("xn", "zn", "w", "yn"), t)
    return InducedCode(
        joint=joint,
        n=n,
        nx=spec.nx,
        nz=spec.nz,
        ny=spec.ny,
        meta={"mode": spec.mode, "m_count": m_count, "j_count": j_count, "label": mode_label},
    )
