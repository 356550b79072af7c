"""``msd``: command-line front end for survival tables, complexity profiles and particle chains."""

from __future__ import annotations

import argparse
import json
import math
import re
import sys
from pathlib import Path

import numpy as np

from . import complexity as cx
from .measures import MeasureError, MixtureMeasure, UniformMeasure
from .transport import ChainConfig, run_chain
from . import verify as vf

_NUM = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_NUM_RE = re.compile(rf"^{_NUM}$")


class SpecError(ValueError):
    pass


def _number(tok, pos, what):
    if not _NUM_RE.match(tok):
        raise SpecError(f"malformed {what} {tok!r} at position {pos}")
    return float(tok)


def parse_measure(spec):
    """Parse ``mix:w@mean@var[,...]`` or ``unif:a,b`` into a measure."""
    spec = spec.strip()
    kind, sep, body = spec.partition(":")
    if not sep:
        raise SpecError(f"measure spec {spec!r} lacks a 'mix:' or 'unif:' prefix")
    offset = len(kind) + 1
    if kind == "mix":
        comps = []
        pos = offset
        for part in body.split(","):
            fields = part.split("@")
            if len(fields) != 3:
                raise SpecError(f"component {part!r} at position {pos} is not w@mean@var")
            vals, p = [], pos
            for tok, what in zip(fields, ("weight", "mean", "variance")):
                vals.append(_number(tok, p, what))
                p += len(tok) + 1
            w, mean, var = vals
            if w < 0:
                raise SpecError(f"negative weight {fields[0]!r} at position {pos}")
            if var < 0:
                raise SpecError(f"negative variance {fields[2]!r} at position {p - len(fields[2]) - 1}")
            comps.append((w, mean, var))
            pos += len(part) + 1
        total = math.fsum(c[0] for c in comps)
        if abs(total - 1.0) > 1e-9:
            raise SpecError(f"weights sum to {total:.12g}, not 1, in {spec!r}")
        return MixtureMeasure.from_components(comps)
    if kind == "unif":
        fields = body.split(",")
        if len(fields) != 2:
            raise SpecError(f"uniform spec {spec!r} needs exactly two bounds a,b")
        a = _number(fields[0], offset, "lower bound")
        b = _number(fields[1], offset + len(fields[0]) + 1, "upper bound")
        if not a < b:
            raise SpecError(f"uniform bounds need a < b, got a={fields[0]}, b={fields[1]}")
        return UniformMeasure(a, b)
    raise SpecError(f"unknown measure family {kind!r} at position 0 (expected 'mix' or 'unif')")


def format_measure(m):
    """Inverse of ``parse_measure`` for mixtures and uniforms."""
    if isinstance(m, UniformMeasure):
        return f"unif:{m.lower!r},{m.upper!r}"
    if isinstance(m, MixtureMeasure):
        return "mix:" + ",".join(f"{float(w)!r}@{float(mu)!r}@{float(v)!r}"
                                 for w, mu, v in m.components)
    raise TypeError(f"no spec syntax for {type(m).__name__}")


def parse_grid(text):
    """``start:stop:step`` inclusive of ``stop``, or a comma list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"grid {text!r} is not start:stop:step")
        start, stop, step = (_strict_float(p) for p in parts)
        if step <= 0 or stop < start:
            raise argparse.ArgumentTypeError(f"grid {text!r} needs step > 0 and stop >= start")
        k = int(math.floor((stop - start) / step + 1e-9))
        return np.round(start + step * np.arange(k + 1), 12)
    return np.array([_strict_float(p) for p in text.split(",")])


def _strict_float(text):
    t = text.strip()
    if t.lower() in ("inf", "+inf"):
        return math.inf
    if not _NUM_RE.match(t):
        raise argparse.ArgumentTypeError(f"malformed number {text!r}")
    return float(t)


def _pos_int(text):
    if not re.fullmatch(r"\d+", text.strip()) or int(text) < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return int(text)


def _seed(text):
    if not re.fullmatch(r"\d+", text.strip()):
        raise argparse.ArgumentTypeError(f"seed must be a nonnegative integer, got {text!r}")
    return int(text)


def _samples(text):
    # accepts 1000000 or 1e6 as long as the value is integral
    v = _strict_float(text)
    if not (math.isfinite(v) and v >= 1 and v == int(v)):
        raise argparse.ArgumentTypeError(f"expected a positive integer count, got {text!r}")
    return int(v)


def _measure_arg(text):
    try:
        return text, parse_measure(text)
    except (SpecError, MeasureError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser():
    p = argparse.ArgumentParser(prog="msd", description=__doc__, allow_abbrev=False)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=False):
        sp.add_argument("--seed", type=_seed, default=0)
        sp.add_argument("--out", required=out_required, help="output file (stdout if omitted)")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")

    s = sub.add_parser("survival", help="survival table s_r(u) of the localization",
                       allow_abbrev=False)
    s.add_argument("--measure", type=_measure_arg, required=True)
    s.add_argument("--snr", type=_strict_float, required=True)
    s.add_argument("--samples", type=_samples, default=int(cx.DEFAULT_SAMPLES))
    s.add_argument("--u-grid", type=parse_grid, default=None)
    s.add_argument("--bands", action="store_true", help="add s_lo,s_hi columns")
    common(s)

    c = sub.add_parser("complexity", help="m*(r) and delta*(r) over an SNR grid",
                       allow_abbrev=False)
    c.add_argument("--measure", type=_measure_arg, required=True)
    c.add_argument("--snr-grid", type=parse_grid, default=parse_grid("0.05:3:0.05"))
    c.add_argument("--delta-grid", type=parse_grid, default=None)
    c.add_argument("--samples", type=_samples, default=int(cx.DEFAULT_SAMPLES))
    common(c)

    z = sub.add_parser("zeta", help="effective curvature zeta*_M(t)", allow_abbrev=False)
    z.add_argument("--measure", type=_measure_arg, required=True)
    z.add_argument("--t-grid", type=parse_grid, default=parse_grid("0.02:2:0.02"))
    z.add_argument("--M-list", type=parse_grid, default=parse_grid("1,2,inf"))
    z.add_argument("--delta-grid", type=parse_grid, default=None)
    z.add_argument("--beta", type=_strict_float, default=1.0)
    z.add_argument("--samples", type=_samples, default=int(cx.DEFAULT_SAMPLES))
    common(z)

    m = sub.add_parser("simulate", help="diffuse-then-denoise particle chain", allow_abbrev=False)
    m.add_argument("--mu", type=_measure_arg, required=True)
    m.add_argument("--nu", type=_measure_arg, required=True)
    m.add_argument("--steps", type=_pos_int, default=100)
    m.add_argument("--eta", type=_strict_float, default=0.01)
    m.add_argument("--beta", type=_strict_float, default=1.0)
    m.add_argument("--particles", type=_samples, default=10_000)
    m.add_argument("--start", choices=("diffused", "equilibrium"), default="diffused")
    m.add_argument("--seed", type=_seed, default=0)
    m.add_argument("--out", required=True, help="output directory")

    v = sub.add_parser("verify", help="run the acceptance checks", allow_abbrev=False)
    v.add_argument("--suite", choices=tuple(vf.SUITES), default="quick")
    v.add_argument("--criteria", type=parse_grid, default=None,
                   help="subset of criterion numbers, e.g. 1,2,5")
    v.add_argument("--seed", type=_seed, default=0)
    return p


# -- writers ----------------------------------------------------------------


def _g(x):
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.6g}"


def _meta_line(seed, n, spec, **extra):
    parts = [f"seed={seed}", f"n={n}", f"spec={spec}"]
    parts += [f"{k}={v}" for k, v in extra.items()]
    return "# " + ", ".join(parts)


def render(header, rows, meta, fmt):
    if fmt == "json":
        doc = {"metadata": meta, "rows": [dict(zip(header, map(_json_num, r))) for r in rows]}
        return json.dumps(doc, indent=2) + "\n"
    lines = [_meta_line(**meta), ",".join(header)]
    lines += [",".join(_g(v) for v in r) for r in rows]
    return "\n".join(lines) + "\n"


def _json_num(x):
    x = float(x)
    return "inf" if math.isinf(x) else x


def _emit(text, out, what):
    if out is None:
        sys.stdout.write(text)
        print(f"{what}: {text.count(chr(10))} lines written to stdout", file=sys.stderr)
        return
    path = Path(out)
    path.write_text(text, newline="\n")
    print(f"{what}: wrote {path}")


# -- commands -----------------------------------------------------------------


def cmd_survival(a):
    spec, m = a.measure
    curve = cx.survival_curve(m, a.snr, n=a.samples, u_grid=a.u_grid, seed=a.seed)
    header = ["u", "s"]
    cols = [curve.u_grid, curve.s_values]
    if a.bands:
        lo, hi = curve.bands()
        header += ["s_lo", "s_hi"]
        cols += [lo, hi]
    rows = list(zip(*cols))
    meta = dict(seed=a.seed, n=a.samples, spec=spec, r=_g(a.snr))
    _emit(render(header, rows, meta, a.format), a.out, f"survival r={_g(a.snr)}")
    return 0


def cmd_complexity(a):
    spec, m = a.measure
    prof = cx.complexity_profile(m, a.snr_grid, n=a.samples, seed=a.seed,
                                 delta_grid=a.delta_grid)
    meta = dict(seed=a.seed, n=a.samples, spec=spec)
    _emit(render(["r", "m_star", "delta_star"], prof.snr_rows, meta, a.format), a.out,
          f"complexity over {len(prof.snr_rows)} SNR values")
    return 0


def cmd_zeta(a):
    spec, m = a.measure
    prof = cx.zeta_profile(m, a.t_grid, a.M_list, beta=a.beta, n=a.samples, seed=a.seed,
                           delta_grid=a.delta_grid)
    meta = dict(seed=a.seed, n=a.samples, spec=spec, beta=_g(a.beta))
    _emit(render(["t", "r", "M", "zeta_star"], prof.time_rows, meta, a.format), a.out,
          f"zeta over {len(a.t_grid)} times x {len(a.M_list)} M values")
    return 0


def cmd_simulate(a):
    (mu_spec, mu), (nu_spec, nu) = a.mu, a.nu
    cfg = ChainConfig(K=a.steps, eta=a.eta, beta=a.beta, n=a.particles, seed=a.seed,
                      mu=mu, nu=nu, mu_spec=mu_spec, nu_spec=nu_spec, start=a.start)
    rep = run_chain(cfg)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = f"mu={mu_spec} nu={nu_spec}"
    meta = dict(seed=a.seed, n=a.particles, spec=spec)
    rows = [(r["k"], r["t"], r["w2_forward"], r["w2_backward"]) for r in rep.rows]
    _emit(render(["k", "t", "w2_forward", "w2_backward"], rows, meta, "csv"), out / "chain.csv",
          "chain")
    for name, ens in (("mu0", rep.initial_mu), ("nu0", rep.initial_nu),
                      ("start", rep.start_ensemble), ("recovered", rep.recovered),
                      ("roundtrip", rep.roundtrip)):
        text = render(["x"], [(v,) for v in ens.positions], meta, "csv")
        _emit(text, out / f"{name}.csv", f"ensemble {name}")
    _emit(rep.to_json() + "\n", out / "report.json", "report")
    return 0


def cmd_verify(a):
    crit = None if a.criteria is None else [int(c) for c in a.criteria]
    if crit and any(c not in vf.CRITERIA for c in crit):
        raise ValueError(f"unknown criterion in {crit}; valid: {sorted(vf.CRITERIA)}")
    rows = vf.run_suite(a.suite, crit, seed=a.seed)
    print(vf.format_table(rows))
    failed = [r for r in rows if r.passed is False]
    print(f"{len(rows) - len(failed)} of {len(rows)} rows pass or inform; {len(failed)} fail")
    return 1 if failed else 0


COMMANDS = {"survival": cmd_survival, "complexity": cmd_complexity, "zeta": cmd_zeta,
            "simulate": cmd_simulate, "verify": cmd_verify}


def run(args):
    """Dispatch a parsed namespace; returns the exit status."""
    try:
        return COMMANDS[args.command](args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"msd {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main(argv=None):
    args = build_parser().parse_args(argv)
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
