"""Command-line interface.

Reports are deterministic: floats are printed with 12 significant digits and
all randomness is keyed by --seed (default 0), so identical invocations
produce byte-identical files.  Grid reports also render a matplotlib figure
next to the delimited output (suppress with --no-figure).

Exit codes: 2 malformed input, 3 infeasible query, 4 enumeration cap
exceeded, 5 I/O failure.
"""

from __future__ import annotations

import json
import math
import sys

import click
import numpy as np

from . import gaussian as G
from . import coding as C
from . import regions as R
from . import upgrade as U
from .probability import CapExceeded, DistortionMatrix, JointPmf, Pmf

EXIT_SCHEMA = 2
EXIT_INFEASIBLE = 3
EXIT_CAP = 4
EXIT_IO = 5


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return f"{v:.12g}"
    return str(v)


def _fail(code: int, msg: str):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _read_json(path: str) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as e:
        _fail(EXIT_IO, f"cannot read {path}: {e}")
    except json.JSONDecodeError as e:
        _fail(EXIT_SCHEMA, f"{path} is not valid JSON: {e}")


def _write_text(path: str, text: str):
    try:
        with open(path, "w") as f:
            f.write(text)
    except OSError as e:
        _fail(EXIT_IO, f"cannot write {path}: {e}")


def _parse_pxz(path: str) -> JointPmf:
    obj = _read_json(path)
    try:
        axes = [a["name"] for a in obj["axes"]]
        if axes == ["x"]:
            p = Pmf.from_json(obj)
            return JointPmf(("x", "z"), p.probs[:, None])
        return JointPmf.from_json(obj).permute(("x", "z"))
    except (KeyError, ValueError, TypeError) as e:
        _fail(EXIT_SCHEMA, f"bad source law in {path}: {e}")


def _parse_distortion(text: str, size: int) -> DistortionMatrix:
    if text == "hamming":
        return DistortionMatrix.hamming(size)
    if text.startswith("squared-embedded:"):
        try:
            vals = [float(v) for v in text.split(":", 1)[1].split(",")]
        except ValueError:
            _fail(EXIT_SCHEMA, f"bad embedding values in {text!r}")
        if len(vals) != size:
            _fail(EXIT_SCHEMA, f"embedding needs {size} values")
        return DistortionMatrix.squared_embedded(vals)
    try:
        return DistortionMatrix.from_json(_read_json(text))
    except (KeyError, ValueError, TypeError) as e:
        _fail(EXIT_SCHEMA, f"bad distortion spec {text!r}: {e}")


def _parse_rc(text: str) -> float:
    if text.strip().lower() in ("inf", "infinity", "unbounded"):
        return math.inf
    try:
        v = float(text)
    except ValueError:
        _fail(EXIT_SCHEMA, f"bad common-randomness rate {text!r}")
    if v < 0:
        _fail(EXIT_SCHEMA, "common-randomness rate must be nonnegative")
    return v


def _parse_grid(text: str) -> np.ndarray:
    try:
        a, b, step = (float(v) for v in text.split(":"))
    except ValueError:
        _fail(EXIT_SCHEMA, f"grid must be start:stop:step, got {text!r}")
    if step <= 0 or b < a:
        _fail(EXIT_SCHEMA, f"bad grid {text!r}")
    n = int(round((b - a) / step))
    return a + step * np.arange(n + 1)


def _maybe_figure(out: str, no_figure: bool, draw):
    if no_figure:
        return None
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig_path = out.rsplit(".", 1)[0] + ".png"
    fig, ax = plt.subplots(figsize=(6, 4))
    draw(ax)
    fig.tight_layout()
    try:
        fig.savefig(fig_path, dpi=120)
    except OSError as e:
        _fail(EXIT_IO, f"cannot write {fig_path}: {e}")
    finally:
        plt.close(fig)
    return fig_path


def _rate_point_json(rp: R.RatePoint, setting: R.Setting, q: R.RegionQuery) -> dict:
    return {
        "setting": setting.label(),
        "delta": rp.delta,
        "r_c": "inf" if math.isinf(rp.r_c) else rp.r_c,
        "rate": rp.rate,
        "rate_bound": rp.rate_bound,
        "sum_bound": rp.sum_bound,
        "realism_gap": rp.realism_gap,
        "v_size": q.v_size,
        "restarts": q.restarts,
        "converged": rp.converged,
        "diagnostics": {k: str(v) for k, v in rp.diagnostics.items()},
    }


@click.group()
def main():
    """Laboratory for rate-distortion trade-offs under exact output-law
    constraints, with side information and limited common randomness."""


def _region_common(pxz, distortion, setting, rc, v_size, restarts, seed):
    p_xz = _parse_pxz(pxz)
    try:
        st = R.Setting.parse(setting)
    except ValueError as e:
        _fail(EXIT_SCHEMA, str(e))
    d = _parse_distortion(distortion, p_xz.sizes[0])
    return p_xz, st, d, _parse_rc(rc), v_size, restarts, seed


def _run_query(solver, p_xz, d, st, delta, rc, v_size, restarts, seed):
    try:
        q = R.RegionQuery(
            p_xz=p_xz, d=d, setting=st, delta=delta, r_c=rc,
            v_size=v_size, restarts=restarts, seed=seed,
        )
        return q, solver(q)
    except R.InfeasibleError as e:
        _fail(EXIT_INFEASIBLE, str(e))
    except CapExceeded as e:
        _fail(EXIT_CAP, str(e))
    except ValueError as e:
        _fail(EXIT_SCHEMA, str(e))


def _region_command(solver, pxz, distortion, setting, delta, delta_grid, rc,
                    v_size, restarts, seed, out, no_figure):
    p_xz, st, d, rcv, v_size, restarts, seed = _region_common(
        pxz, distortion, setting, rc, v_size, restarts, seed
    )
    if (delta is None) == (delta_grid is None):
        _fail(EXIT_SCHEMA, "give exactly one of --delta / --delta-grid")
    if delta is not None:
        q, rp = _run_query(solver, p_xz, d, st, delta, rcv, v_size, restarts, seed)
        text = json.dumps(_rate_point_json(rp, st, q), indent=2, default=_fmt) + "\n"
        if out:
            _write_text(out, text)
        else:
            click.echo(text, nl=False)
        return
    grid = _parse_grid(delta_grid)
    rows = []
    v_used = v_size
    for dv in grid:
        q, rp = _run_query(solver, p_xz, d, st, float(dv), rcv, v_size, restarts, seed)
        rows.append((float(dv), rp))
        v_used = q.v_size
    header = "delta,r_c,rate,setting,v_size,restarts,converged"
    lines = [header]
    for dv, rp in rows:
        lines.append(
            ",".join([
                _fmt(dv), "inf" if math.isinf(rcv) else _fmt(rcv), _fmt(rp.rate),
                st.label(), str(v_used), str(restarts), str(rp.converged).lower(),
            ])
        )
    text = "\n".join(lines) + "\n"
    if out:
        _write_text(out, text)
        _maybe_figure(out, no_figure, lambda ax: (
            ax.plot([r[0] for r in rows], [r[1].rate for r in rows], marker="o"),
            ax.set_xlabel("distortion"),
            ax.set_ylabel("rate (bits)"),
            ax.set_title(f"boundary rate, {st.label()}, r_c={'inf' if math.isinf(rcv) else _fmt(rcv)}"),
        ))
    else:
        click.echo(text, nl=False)


_region_options = [
    click.option("--pxz", required=True, help="JSON file with the source law over (x, z)"),
    click.option("--distortion", default="hamming", show_default=True,
                 help="hamming | squared-embedded:v1,v2,... | JSON file"),
    click.option("--setting", default="ed-marginal", show_default=True,
                 help="ed-marginal | ed-joint | d-marginal | d-joint | none"),
    click.option("--delta", type=float, default=None, help="distortion budget"),
    click.option("--delta-grid", default=None, help="start:stop:step sweep"),
    click.option("--rc", default="inf", show_default=True, help="common-randomness rate or 'inf'"),
    click.option("--v-size", type=int, default=None, help="auxiliary alphabet size"),
    click.option("--restarts", type=int, default=32, show_default=True),
    click.option("--seed", type=int, default=0, show_default=True),
    click.option("--out", default=None, help="output file (JSON or CSV)"),
    click.option("--no-figure", is_flag=True, help="skip the PNG next to CSV output"),
]


def _apply(options, f):
    for opt in reversed(options):
        f = opt(f)
    return f


@main.command(name="region", help="Boundary rate via the multi-start optimizer.")
@(lambda f: _apply(_region_options, f))
def region(**kw):
    _region_command(R.min_rate, **kw)


@main.command(name="oracle", help="Boundary rate via the brute-force mesh oracle.")
@(lambda f: _apply(_region_options, f))
def oracle(**kw):
    _region_command(R.brute_force_min_rate, **kw)


@main.command(name="gaussian-curve", help="Closed-form rate curves for the standard normal source.")
@click.option("--grid", default="0.05:1.95:0.05", show_default=True, help="delta grid start:stop:step")
@click.option("--rc", default="", help="extra finite CR rates, comma separated")
@click.option("--out", required=True, help="CSV output path")
@click.option("--no-figure", is_flag=True)
def gaussian_curve(grid, rc, out, no_figure):
    deltas = _parse_grid(grid)
    extra = []
    if rc.strip():
        for tok in rc.split(","):
            v = _parse_rc(tok)
            if not math.isinf(v) and v != 0.0:
                extra.append(v)
    cols = ["delta", "rate_rc0", "rate_rcinf", "rate_classical"]
    cols += [f"rate_rc={_fmt(v)}" for v in extra]
    lines = [",".join(cols)]
    table = []
    for dv in deltas:
        dv = float(dv)
        try:
            row = [dv, G.rate_normal(dv, 0.0), G.rate_normal(dv, math.inf),
                   max(0.0, 0.5 * math.log2(1.0 / dv))]
            row += [G.rate_normal(dv, v) for v in extra]
        except ValueError as e:
            _fail(EXIT_SCHEMA, f"delta={dv}: {e}")
        table.append(row)
        lines.append(",".join(_fmt(v) for v in row))
    _write_text(out, "\n".join(lines) + "\n")

    def draw(ax):
        xs = [r[0] for r in table]
        for i, name in enumerate(cols[1:], start=1):
            ax.plot(xs, [r[i] for r in table], label=name)
        ax.set_xlabel("distortion")
        ax.set_ylabel("rate (bits)")
        ax.legend()
        ax.set_title("standard normal source, exact output matching")

    _maybe_figure(out, no_figure, draw)


def _candidate_from_json(obj: dict) -> R.Candidate:
    joint = JointPmf.from_json(obj)
    return R.Candidate(joint.permute(("x", "z", "v", "y")))


@main.command(name="simulate", help="Random-codebook simulation of a candidate scheme.")
@click.option("--spec", "spec_path", required=True, help="JSON scheme description")
@click.option("--trials", type=int, default=10000, show_default=True)
@click.option("--codebooks", type=int, default=8, show_default=True,
              help="codebooks drawn; the best by exact TV is kept (mode 'ed')")
@click.option("--exact/--no-exact", default=True, show_default=True,
              help="exact small-n analysis alongside sampling (mode 'ed')")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, help="JSON report path")
@click.option("--induced-out", default=None, help="write the exact induced code (tiny n only)")
def simulate(spec_path, trials, codebooks, exact, seed, out, induced_out):
    obj = _read_json(spec_path)
    try:
        cand = _candidate_from_json(obj["candidate"])
        spec = C.SchemeSpec(
            mode=obj.get("mode", "ed"),
            n=int(obj["n"]),
            rate=float(obj["rate"]),
            cr_rate=float(obj.get("cr_rate", 0.0)),
            candidate=cand,
            epsilon=float(obj.get("epsilon", C.DEFAULT_EPS)),
            eps_typ=float(obj.get("eps_typ", C.DEFAULT_EPS_TYP)),
            seed=seed,
        )
        d = _parse_distortion(obj.get("distortion", "hamming"), spec.nx)
    except (KeyError, ValueError, TypeError) as e:
        _fail(EXIT_SCHEMA, f"bad scheme spec: {e}")
    report = {
        "mode": spec.mode, "n": spec.n, "rate": spec.rate, "cr_rate": spec.cr_rate,
        "epsilon": spec.epsilon, "m_count": spec.m_count, "j_count": spec.j_count,
        "mp_count": spec.mp_count, "seed": seed,
    }
    try:
        if spec.mode == "ed" and exact:
            cb, analysis = C.select_codebook(spec, d, k=codebooks)
            report["codebook_seed"] = cb.codebook_seed
            report["tv_code_to_target"] = analysis["tv_code_to_target"]
            report["tv_reference_to_target"] = analysis["tv_reference_to_target"]
            report["tv_code_to_reference_indices"] = analysis["tv_code_to_reference_indices"]
            report["distortion_exact"] = analysis.get("distortion_code")
        else:
            cb = C.build_codebook(spec, codebook_seed=0)
            report["codebook_seed"] = 0
        if trials > 0:
            r = C.run_experiment(cb, d, trials, seed=seed)
            report.update(
                trials=r.n_trials, mean_distortion=r.mean_distortion, ci95=r.ci95,
                mprime_error_rate=r.mprime_error_rate, flagged_trials=r.flagged_trials,
            )
        if induced_out:
            code = C.exact_induced_code(cb)
            _write_text(induced_out, json.dumps({
                "joint": code.joint.to_json(),
                "n": code.n, "nx": code.nx, "nz": code.nz, "ny": code.ny,
                "p_xz": JointPmf(("x", "z"), spec.p_xz).to_json(),
                "meta": code.meta,
            }, default=_fmt) + "\n")
    except CapExceeded as e:
        _fail(EXIT_CAP, str(e))
    _write_text(out, json.dumps(report, indent=2, default=_fmt) + "\n")


@main.command(name="upgrade", help="Rewrite a code's output rows to match the target law exactly.")
@click.option("--induced", "induced_path", required=True, help="induced-code JSON (from simulate)")
@click.option("--mode", type=click.Choice(["marginal", "joint"]), default="marginal", show_default=True)
@click.option("--out", required=True, help="upgraded induced-code JSON")
@click.option("--report", "report_path", default=None, help="verification report JSON")
def upgrade_cmd(induced_path, mode, out, report_path):
    obj = _read_json(induced_path)
    try:
        joint = JointPmf.from_json(obj["joint"])
        n = int(obj["n"])
        p_xz = JointPmf.from_json(obj["p_xz"])
        px = p_xz.tensor.sum(axis=1)
        if mode == "marginal":
            target = px
            for _ in range(n - 1):
                target = np.multiply.outer(target, px).reshape(-1)
        else:
            t1 = p_xz.tensor
            target = t1
            for _ in range(n - 1):
                # (y..., z...) blocks: row-major over y^n then z^n
                target = np.einsum("ab,cd->acbd", target.reshape(target.shape[0], -1), t1).reshape(
                    target.shape[0] * t1.shape[0], -1
                )
        inp = U.UpgradeInput(joint, target, mode)
    except (KeyError, ValueError, TypeError) as e:
        _fail(EXIT_SCHEMA, f"bad induced code: {e}")
    try:
        result = U.upgrade(inp)
    except CapExceeded as e:
        _fail(EXIT_CAP, str(e))
    _write_text(out, json.dumps({
        "joint": result.joint.to_json(),
        "n": n, "nx": obj["nx"], "nz": obj["nz"], "ny": obj["ny"],
        "p_xz": obj["p_xz"],
    }, default=_fmt) + "\n")
    if report_path:
        rep = U.verify_upgrade(inp, result)
        rep.update(tv_moved=result.tv_moved, tv_bound=result.tv_bound,
                   blocks_touched=result.blocks_touched, mode=mode)
        _write_text(report_path, json.dumps(rep, indent=2, default=_fmt) + "\n")


@main.command(name="selftest", help="Quick internal consistency checks.")
def selftest():
    import numpy as np

    rng = np.random.default_rng(0)
    # closed forms
    for dv in np.linspace(0.05, 1.95, 39):
        assert abs(G.rho_residual(G.solve_rho(dv, 1.0), dv, 1.0)) < 1e-12
        assert abs(G.rate_normal(dv, 0.0) - 0.5 * math.log2(2.0 / dv)) < 1e-12
    # total variation basics
    for _ in range(100):
        p = rng.dirichlet(np.ones(6))
        q = rng.dirichlet(np.ones(6))
        from .probability import tv_distance

        assert 0.0 <= tv_distance(p, q) <= 1.0 + 1e-15
    # upgrader exactness on a random code
    pxzw = rng.dirichlet(np.ones(24)).reshape(4, 2, 3)
    rows = rng.dirichlet(np.ones(4), size=(2, 3))
    t = pxzw[..., None] * rows[None]
    inp = U.UpgradeInput(JointPmf(("xn", "zn", "w", "yn"), t), rng.dirichlet(np.ones(4)), "marginal")
    U.verify_upgrade(inp, U.upgrade(inp))
    click.echo("selftest: ok")


if __name__ == "__main__":
    main()
