"""Command line: convert a PDE file, test stability, bisect a parameter, self-test.

Exit codes: 0 certified / success, 2 not certified, 1 error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import examples
from .pde_model import PdeFormatError, parse_pde, template_names
from .pi_algebra import PIError, PIOp
from .pie_converter import convert
from .poly_core import VARS, Poly, Rect
from .sdp import SolverSettings, write_sdpa

EXIT_OK, EXIT_ERROR, EXIT_NOT_CERTIFIED = 0, 1, 2


@dataclass
class RunConfig:
    command: str
    pde: str = ""
    params: dict = field(default_factory=dict)
    degree: int = 1
    eps: str | None = None            # None: library default 1e-5
    delta: str | None = None          # None: 1e-5 * area
    quad_order: int = 12
    slack_degree: int | None = None
    max_psd_size: int = 200
    solver: SolverSettings = field(default_factory=SolverSettings)
    emit: str | None = None           # convert: pie | json ; stability: sdpa
    emit_path: str | None = None
    report: str | None = None
    bisect: tuple | None = None       # (param, lo, hi, iters)
    minimize: bool = False
    seed: int = 0
    perturb: bool = False


# --------------------------------------------------------------------------
# input


def _resolve(path: str) -> tuple[str, str]:
    """File text and a display name; bare names fall back to bundled examples."""
    p = Path(path)
    if p.is_file():
        return p.read_text(), p.stem
    if path in examples.names():
        return examples.text(path), path
    raise FileNotFoundError(f"no such PDE file: {path}")


def _param_value(s: str):
    try:
        return int(s)
    except ValueError:
        return float(s)


def load_pair(cfg: RunConfig, extra: dict | None = None):
    text, name = _resolve(cfg.pde)
    params = dict(examples.default_params(name)) if cfg.pde in examples.names() else {}
    params.update(cfg.params)
    params.update(extra or {})
    missing = [t for t in template_names(text) if t not in params]
    if missing:
        raise PdeFormatError(f"template parameters without values: {', '.join(missing)}")
    return convert(parse_pde(text, params, name=name))


# --------------------------------------------------------------------------
# kernel dumps


def kernel_json(op: PIOp, name: str) -> list[dict]:
    out = []
    for oc, ic, key, mat in sorted(op.iter_terms(), key=lambda t: (t[0], t[1], str(t[2]))):
        terms = []
        for exps in sorted(mat.terms):
            coef = mat.terms[exps]
            if any(exps[4:]):
                raise PIError(f"kernel of {name} still depends on a dummy variable")
            for i in range(mat.rows):
                for j in range(mat.cols):
                    c = coef[i, j]
                    if c == 0:
                        continue
                    num, den = (c.numerator, c.denominator) if mat.exact else (float(c), 1)
                    terms.append({"row": i, "col": j, "exps": list(exps[:4]),
                                  "num": int(num) if mat.exact else num, "den": int(den)})
        out.append({"block": f"{name}[{oc}<-{ic}] {key}", "rows": mat.rows, "cols": mat.cols,
                    "terms": terms})
    return out


def pie_text(pair) -> str:
    r = pair.rect
    head = f"# PIE on [{r.a}, {r.b}] x [{r.c}, {r.d}]; variables {', '.join(VARS[:4])}"
    return "\n".join([head, "T:", pair.T.pretty(), "A:", pair.A.pretty()]) + "\n"


def _write(text: str, path: str | None):
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------
# commands


def cmd_convert(cfg: RunConfig) -> int:
    pair = load_pair(cfg)
    if cfg.emit == "json":
        doc = {"rect": [str(v) for v in (pair.rect.a, pair.rect.b, pair.rect.c, pair.rect.d)],
               "kernels": kernel_json(pair.T, "T") + kernel_json(pair.A, "A")}
        _write(json.dumps(doc, indent=1) + "\n", cfg.emit_path)
    else:
        _write(pie_text(pair), cfg.emit_path)
    return EXIT_OK


def _lpi_config(cfg: RunConfig):
    from .lpi_sdp import LpiConfig
    return LpiConfig(slack_degree=cfg.slack_degree, max_psd_size=cfg.max_psd_size)


def _probe(cfg: RunConfig, value: float):
    from .lpi_sdp import certify
    param = cfg.bisect[0]
    pair = load_pair(cfg, {param: value})
    verdict, _ = certify(pair, cfg.degree, cfg.eps, cfg.delta, _lpi_config(cfg), cfg.solver)
    detail = "; ".join(verdict.failures[:2])
    return verdict.certified, detail


def _run_bisection(cfg: RunConfig):
    from .lpi_sdp import bisect_parameter
    param, lo, hi, iters = cfg.bisect
    res = bisect_parameter(lambda v: _probe(cfg, v), lo, hi, iters, maximize=not cfg.minimize)
    probes = [{"param": param, "value": p.value, "certified": p.certified, "detail": p.detail}
              for p in res.probes]
    return res, probes


def cmd_stability(cfg: RunConfig) -> int:
    from .lpi_sdp import assemble_lpi, certify
    if cfg.bisect:
        return cmd_bisect(cfg)
    pair = load_pair(cfg)
    if cfg.emit == "sdpa":
        problem = assemble_lpi(pair.T, pair.A, cfg.degree, cfg.eps, cfg.delta, _lpi_config(cfg))
        write_sdpa(problem.sdp, cfg.emit_path, comment=f"pie2d stability {cfg.pde} d={cfg.degree}")
    verdict, _ = certify(pair, cfg.degree, cfg.eps, cfg.delta, _lpi_config(cfg), cfg.solver)
    print(f"{verdict.verdict}: degree {verdict.degree}, eps {verdict.eps:g}, del {verdict.delta:g}")
    if verdict.certified:
        print(f"zeta {verdict.zeta:.6g}, decay bound {verdict.decay_bound:.6g}")
    for f in verdict.failures:
        print(f"  {f}")
    if cfg.report:
        Path(cfg.report).write_text(json.dumps(verdict.report([]), indent=1, sort_keys=True) + "\n")
    return EXIT_OK if verdict.certified else EXIT_NOT_CERTIFIED


def cmd_bisect(cfg: RunConfig) -> int:
    res, probes = _run_bisection(cfg)
    for p in probes:
        print(f"  {p['param']} = {p['value']:.6g}: {'certified' if p['certified'] else 'not certified'}")
    param = cfg.bisect[0]
    if res.threshold is None:
        print(f"{param}: nothing certified in [{cfg.bisect[1]}, {cfg.bisect[2]}]")
    else:
        side = "smallest" if cfg.minimize else "largest"
        print(f"{param}: {side} certified value {res.threshold:.6g}")
    if cfg.report:
        doc = {"verdict": "certified" if res.threshold is not None else
               f"not certified at degree {cfg.degree}",
               "param": param, "threshold": res.threshold, "degree": cfg.degree,
               "eps": cfg.eps, "del": cfg.delta, "probes": probes}
        Path(cfg.report).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return EXIT_OK if res.threshold is not None else EXIT_NOT_CERTIFIED


# --------------------------------------------------------------------------
# self-test


def _selftest_checks(cfg: RunConfig):
    from .pi_calculus import check_inverse, invert_011, is_identity
    from .pie_converter import derivative_of_T
    from .positivity import PositivityBasis, bump, gram_value, lpi_param_map
    from .verify import (COMPOSITION_MAPS, QuadratureGrid, adjoint_trial, apply_numeric,
                         composition_trial, inner_product, random_separable_011, random_state)

    rng = np.random.default_rng(cfg.seed)
    grid = QuadratureGrid(Rect.unit(), cfg.quad_order)

    def compositions():
        worst = max(composition_trial(n, rng, grid) for n in COMPOSITION_MAPS for _ in range(3))
        return worst <= 1e-8, f"worst relative gap {worst:.2e}"

    def adjoints():
        sizes = [((0, 0, 0, 1), (0, 0, 0, 1)), ((1, 1, 1, 0), (0, 0, 0, 1)),
                 ((0, 0, 0, 1), (1, 1, 1, 1))]
        worst = max(adjoint_trial(o, i, rng, grid) for o, i in sizes for _ in range(3))
        return worst <= 1e-8, f"worst gap {worst:.2e}"

    def inverse():
        ok = all(check_inverse(Qop, invert_011(Qop))
                 for Qop in (random_separable_011(1, 1, rng, degree=1) for _ in range(3)))
        return ok, "exact"

    def t_identities():
        bad = []
        for name in ("heat", "heat_r15", "wave", "wave_dirichlet"):
            spec = examples.load(name)
            pair = convert(spec)
            T = pair.T
            if cfg.perturb:
                T = _perturbed(T)
            if not is_identity(derivative_of_T(spec, T)):
                bad.append(name)
        return not bad, "exact" if not bad else f"D T != I for {', '.join(bad)}"

    def positivity():
        worst = 0.0
        for weighted in (False, True):
            b = PositivityBasis(1, 1, grid.rect, bump(grid.rect) if weighted else Poly.const(1))
            G = rng.normal(size=(b.Q, b.Q))
            P = G @ G.T / b.Q
            N = lpi_param_map(b, P)
            u, _ = random_state(b.in_sizes, 3, rng)
            lhs = inner_product(u, apply_numeric(N, u, grid), grid)
            rhs = gram_value(b, P, u, grid)
            if lhs < -1e-10:
                return False, f"negative form {lhs:.2e}"
            worst = max(worst, abs(lhs - rhs) / max(1.0, abs(rhs)))
        return worst <= 1e-8, f"form vs Gram gap {worst:.2e}"

    return [("compositions", compositions), ("adjoints", adjoints), ("inverse", inverse),
            ("T identities", t_identities), ("positivity", positivity)]


def _perturbed(T: PIOp) -> PIOp:
    """T with one kernel coefficient nudged (debug aid for the self-test)."""
    from fractions import Fraction
    out = T.scale(1)
    oc, ic, key, mat = next(iter(sorted(out.iter_terms(), key=lambda t: str(t[2]))))
    exps = sorted(mat.terms)[0]
    mat.terms[exps][0, 0] += Fraction(1, 1000)
    return out


def cmd_selftest(cfg: RunConfig) -> int:
    rows = []
    for name, check in _selftest_checks(cfg):
        t0 = time.perf_counter()
        try:
            ok, detail = check()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        rows.append((name, ok, detail, time.perf_counter() - t0))
    width = max(len(r[0]) for r in rows)
    for name, ok, detail, dt in rows:
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}  ({dt:.1f}s)")
    npass = sum(r[1] for r in rows)
    print(f"{npass}/{len(rows)} checks passed")
    return EXIT_OK if npass == len(rows) else EXIT_ERROR


# --------------------------------------------------------------------------
# argument parsing


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("pde", help="PDE file, or the name of a bundled example")
    p.add_argument("--param", "-p", action="append", default=[], metavar="NAME=VALUE",
                   help="template parameter value (repeatable)")


def _add_lpi(p: argparse.ArgumentParser):
    p.add_argument("--degree", "-d", type=int, default=1)
    p.add_argument("--eps", default=None, help="strictness margin of P (default 1e-5)")
    p.add_argument("--del", dest="delta", default=None,
                   help="decay margin (default 1e-5 times the domain area)")
    p.add_argument("--slack-degree", type=int, default=None)
    p.add_argument("--max-psd-size", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--report", default=None, help="write a JSON report here")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pie2d", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convert", help="convert a PDE file to a PIE and print the kernels")
    _add_common(c)
    c.add_argument("--emit", choices=("pie", "json"), default="pie")
    c.add_argument("--out", "-o", default=None)

    s = sub.add_parser("stability", help="test stability through the Lyapunov LPI")
    _add_common(s)
    _add_lpi(s)
    s.add_argument("--emit", nargs=2, metavar=("FORMAT", "PATH"), default=None,
                   help="write the SDP, e.g. --emit sdpa out.dat-s")
    s.add_argument("--bisect", nargs=4, metavar=("PARAM", "LO", "HI", "ITERS"), default=None)
    s.add_argument("--minimize", action="store_true")

    b = sub.add_parser("bisect", help="bisect a template parameter for certification")
    b.add_argument("pde")
    b.add_argument("param")
    b.add_argument("lo", type=float)
    b.add_argument("hi", type=float)
    b.add_argument("--iters", type=int, default=8)
    b.add_argument("--param-value", "-p", dest="param_values", action="append", default=[],
                   metavar="NAME=VALUE")
    _add_lpi(b)
    b.add_argument("--minimize", action="store_true",
                   help="search for the smallest certified value instead of the largest")

    t = sub.add_parser("selftest", help="run the numerical oracle checks")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--quad-order", type=int, default=12)
    t.add_argument("--perturb", action="store_true", help="nudge one kernel; the suite should fail")
    return ap


def _params(items) -> dict:
    out = {}
    for it in items:
        if "=" not in it:
            raise PdeFormatError(f"parameter {it!r} is not NAME=VALUE")
        k, v = it.split("=", 1)
        out[k.strip()] = _param_value(v.strip())
    return out


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(ns.command)
    if ns.command == "selftest":
        cfg.seed, cfg.quad_order, cfg.perturb = ns.seed, ns.quad_order, ns.perturb
        return cfg
    cfg.pde = ns.pde
    if ns.command == "convert":
        cfg.params = _params(ns.param)
        cfg.emit, cfg.emit_path = ns.emit, ns.out
        return cfg
    cfg.params = _params(ns.param if ns.command == "stability" else ns.param_values)
    cfg.degree, cfg.eps, cfg.delta = ns.degree, ns.eps, ns.delta
    cfg.slack_degree, cfg.max_psd_size, cfg.report = ns.slack_degree, ns.max_psd_size, ns.report
    cfg.solver = SolverSettings(tol=ns.tol, max_iter=ns.max_iter)
    cfg.minimize = ns.minimize
    if ns.command == "bisect":
        cfg.bisect = (ns.param, ns.lo, ns.hi, ns.iters)
    else:
        if ns.emit:
            if ns.emit[0] != "sdpa":
                raise PdeFormatError(f"unknown emit format {ns.emit[0]!r}")
            cfg.emit, cfg.emit_path = ns.emit
        if ns.bisect:
            param, lo, hi, iters = ns.bisect
            cfg.bisect = (param, float(lo), float(hi), int(iters))
    return cfg


COMMANDS = {"convert": cmd_convert, "stability": cmd_stability, "bisect": cmd_bisect,
            "selftest": cmd_selftest}


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(ns)
        return COMMANDS[cfg.command](cfg)
    except (OSError, ValueError, PIError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
