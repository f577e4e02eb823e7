"""Command-line interface.

Exit codes: 0 on success, 1 on usage or input errors, 2 when a computation
fails (solver non-convergence, sampling or estimation failure).
"""
from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import bootstrap as bs
from . import harness
from .errors import GraphFormatError, LapcertError
from .functionals import FUNCTIONAL_NAMES, parse_functional
from .graph import guess_format, load_edge_list
from .sampling import draw_sample, load_sample, probabilities_for, save_sample


class UsageError(Exception):
    """Bad flags or malformed user input; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _unit_interval(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("must lie in (0, 1)")
    return v


def _add_graph(p):
    p.add_argument("--graph", required=True, metavar="PATH", help="edge list (whitespace, .csv or .mtx)")
    p.add_argument("--graph-format", choices=("whitespace", "csv", "mtx"),
                   help="override the format guessed from the file extension")
    p.add_argument("--one-based", action="store_true", help="vertex ids in the file start at 1")
    p.add_argument("--header", action="store_true", help="skip the first data row")


def _add_seed(p):
    p.add_argument("--seed", type=int, required=True, help="master random seed (mandatory)")


def _add_out(p):
    p.add_argument("--out", metavar="PATH", help="write the report here instead of stdout")
    p.add_argument("--jsonl", action="store_true", help="emit line-delimited JSON instead of CSV")


def _add_functional(p):
    p.add_argument("--functional", choices=FUNCTIONAL_NAMES, required=True,
                   help="error functional: fro, fro2 (squared), op (operator norm), reg (regression)")
    p.add_argument("--tau", type=float, help="regression penalty (required for reg)")
    p.add_argument("--y", metavar="PATH", help="regression observations, one value per line (required for reg)")
    p.add_argument("--alpha", type=_unit_interval, default=0.05, help="1 - confidence level (default 0.05)")
    p.add_argument("--b-outer", type=int, default=50, help="outer bootstrap replicates (default 50)")
    p.add_argument("--b-inner", type=int, default=30, help="inner bootstrap replicates (default 30)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lapcert", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=_positive_int,
                        help="worker cap (default: LAPCERT_THREADS or 1)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sparsify", help="draw a sparsified Laplacian and save it")
    _add_graph(p)
    p.add_argument("--scheme", choices=("ew", "er", "aer"), required=True,
                   help="edge-weight, effective-resistance or approximate effective-resistance probabilities")
    size = p.add_mutually_exclusive_group(required=True)
    size.add_argument("--n-samples", type=_positive_int, help="number of edge draws N")
    size.add_argument("--fraction", type=float, help="N as a fraction of |E| (rounded down)")
    _add_seed(p)
    p.add_argument("--out", required=True, metavar="PATH", help="sample file to write")
    p.add_argument("--eps", type=float, default=1.0, help="accuracy of the aer sketch (default 1.0)")
    p.add_argument("--tol", type=float, default=1e-10, help="relative residual for resistance solves")

    p = sub.add_parser("estimate", help="bootstrap quantile of an error functional")
    p.add_argument("--sample", required=True, metavar="PATH", help="sample file from sparsify")
    _add_graph(p)
    _add_functional(p)
    _add_seed(p)
    _add_out(p)

    p = sub.add_parser("cut-ci", help="simultaneous confidence intervals for cut values")
    p.add_argument("--sample", required=True, metavar="PATH", help="sample file from sparsify")
    _add_graph(p)
    p.add_argument("--cuts", required=True, metavar="PATH",
                   help="one cut per line: a 0/1 string of length n or a list of vertex ids")
    p.add_argument("--alpha", type=_unit_interval, default=0.05, help="1 - confidence level (default 0.05)")
    p.add_argument("--b", type=int, default=50, help="bootstrap replicates (default 50)")
    _add_seed(p)
    _add_out(p)

    p = sub.add_parser("eig-ci", help="simultaneous confidence intervals for bottom eigenvalues")
    p.add_argument("--sample", required=True, metavar="PATH", help="sample file from sparsify")
    _add_graph(p)
    p.add_argument("--r", type=int, required=True, help="number of bottom eigenvalues (>= 2)")
    p.add_argument("--alpha", type=_unit_interval, default=0.05, help="1 - confidence level (default 0.05)")
    p.add_argument("--b", type=int, default=50, help="bootstrap replicates (default 50)")
    _add_seed(p)
    _add_out(p)

    p = sub.add_parser("refine", help="forecast the sample size meeting an error threshold")
    p.add_argument("--sample", required=True, metavar="PATH", help="sample file from sparsify")
    _add_graph(p)
    _add_functional(p)
    p.add_argument("--threshold", type=float, required=True, help="target quantile of the error")
    p.add_argument("--grid", default="", help="comma-separated sample sizes for the extrapolated curve")
    _add_seed(p)
    p.add_argument("--out", metavar="PATH", help="write the report here instead of stdout")

    p = sub.add_parser("coverage", help="run a coverage experiment from a config file")
    p.add_argument("--config", required=True, metavar="PATH", help="flat key = value config")
    p.add_argument("--out", metavar="PATH", help="write the CSV report here instead of stdout")
    return parser


# ---------------------------------------------------------------------------


def _load_graph(args):
    fmt = args.graph_format or guess_format(args.graph)
    try:
        return load_edge_list(args.graph, fmt, one_based=args.one_based, header=args.header)
    except OSError as exc:
        raise UsageError(f"cannot read graph: {exc}") from exc


def _threads(args) -> int:
    return args.threads or harness.default_workers()


def _emit(text: str, path):
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_y(path, n):
    try:
        y = np.loadtxt(path, dtype=float, ndmin=1)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read --y: {exc}") from exc
    if y.shape != (n,):
        raise UsageError(f"--y has {y.size} values, graph has {n} vertices")
    return y


def _functional(args, n):
    if args.functional == "reg":
        if args.tau is None or args.y is None:
            raise UsageError("--functional reg needs --tau and --y")
        if args.tau < 0:
            raise UsageError("--tau must be non-negative")
        return parse_functional("reg", y=_load_y(args.y, n), tau=args.tau)
    return parse_functional(args.functional)


def _bootstrap_cfg(args, B_outer, B_inner=2):
    try:
        return bs.BootstrapConfig(B_outer, B_inner, args.alpha, args.seed, _threads(args))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load_sample(args):
    g = _load_graph(args)
    try:
        return g, load_sample(args.sample, g)
    except OSError as exc:
        raise UsageError(f"cannot read sample: {exc}") from exc


def parse_cuts(lines, n: int) -> np.ndarray:
    """Cut vectors from text lines: ``0101...`` strings or vertex-id lists."""
    cuts = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.replace(",", " ").split()
        if len(tokens) == 1 and len(line) > 1 and set(line) <= {"0", "1"}:
            if len(line) != n:
                raise UsageError(f"cuts line {lineno}: cut has length {len(line)}, graph has {n} vertices")
            cuts.append(np.frombuffer(line.encode(), dtype=np.uint8) == ord("1"))
            continue
        try:
            idx = np.array([int(t) for t in tokens], dtype=np.int64)
        except ValueError:
            raise UsageError(f"cuts line {lineno}: expected a 0/1 string or vertex ids") from None
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise UsageError(f"cuts line {lineno}: vertex id out of range for n={n}")
        x = np.zeros(n, dtype=bool)
        x[idx] = True
        cuts.append(x)
    if not cuts:
        raise UsageError("cuts file contains no cuts")
    return np.vstack(cuts)


def cmd_sparsify(args):
    g = _load_graph(args)
    if args.n_samples is not None:
        N = args.n_samples
    else:
        N = int(math.floor(args.fraction * g.m))
        if N < 1:
            raise UsageError(f"--fraction {args.fraction} gives N = {N} on {g.m} edges")
    if args.scheme == "aer" and not 0 < args.eps <= 1:
        raise UsageError("--eps must lie in (0, 1]")
    p = probabilities_for(g, args.scheme, eps=args.eps, aer_seed=args.seed, tol=args.tol)
    s = draw_sample(g, p, N, args.seed)
    save_sample(s, args.out)
    pr = p.probs
    uniform = bool(np.allclose(pr, 1.0 / g.m, rtol=1e-10, atol=0))
    print(f"N={s.N} unique_edges={s.m_unique} max_scale={s.max_scale!r}")
    print(f"scheme={args.scheme} min_prob={float(pr.min())!r} max_prob={float(pr.max())!r} uniform={'yes' if uniform else 'no'}")


def cmd_estimate(args):
    g, s = _load_sample(args)
    spec = _functional(args, g.n)
    cfg = _bootstrap_cfg(args, args.b_outer, args.b_inner)
    est = bs.algorithm1_quantile(s, spec, cfg)
    _emit(bs.to_jsonl(est) if args.jsonl else bs.to_csv(est), args.out)


def cmd_cut_ci(args):
    g, s = _load_sample(args)
    try:
        with open(args.cuts, encoding="utf-8") as fh:
            cuts = parse_cuts(fh, g.n)
    except OSError as exc:
        raise UsageError(f"cannot read cuts: {exc}") from exc
    res = bs.algorithm2_cut_cis(s, cuts, _bootstrap_cfg(args, args.b))
    _emit(bs.to_jsonl(res) if args.jsonl else bs.to_csv(res), args.out)


def cmd_eig_ci(args):
    if args.r < 2:
        raise UsageError("--r must be at least 2")
    g, s = _load_sample(args)
    if args.r > g.n:
        raise UsageError(f"--r exceeds the vertex count {g.n}")
    res = bs.eigenvalue_cis(s, args.r, _bootstrap_cfg(args, args.b))
    print(f"q_hat={res.q_hat!r}", file=sys.stderr)
    _emit(bs.to_jsonl(res) if args.jsonl else bs.to_csv(res), args.out)


def cmd_refine(args):
    if args.threshold <= 0:
        raise UsageError("--threshold must be positive")
    try:
        grid = [int(t) for t in args.grid.split(",") if t.strip()]
    except ValueError:
        raise UsageError("--grid must be comma-separated integers") from None
    g, s = _load_sample(args)
    spec = _functional(args, g.n)
    cfg = _bootstrap_cfg(args, args.b_outer, args.b_inner)
    q0 = bs.algorithm1_quantile(s, spec, cfg).q_hat
    N0 = s.N
    if any(N < N0 for N in grid):
        raise UsageError(f"--grid sizes must be at least the current N0={N0}")
    N1 = bs.forecast_sample_size(q0, N0, args.threshold)
    rows = [("estimate", N0, q0), ("forecast", N1, bs.extrapolate_quantile(q0, N0, N1))]
    rows += [("grid", N, bs.extrapolate_quantile(q0, N0, N)) for N in grid]
    _emit(bs.csv_text(("kind", "N", "q_hat"), rows), args.out)
    if N1 == N0:
        print("no refinement needed", file=sys.stderr)
    else:
        print(f"forecast N1={N1}", file=sys.stderr)


def cmd_coverage(args):
    try:
        cfg = harness.load_config(args.config)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from exc
    except LapcertError as exc:
        raise UsageError(f"config: {exc}") from exc
    workers = args.threads or (cfg.workers if cfg.workers > 1 else harness.default_workers())
    report = harness.run_coverage_experiment(cfg, workers=workers)
    _emit(harness.report_csv(report), args.out)


COMMANDS = {
    "sparsify": cmd_sparsify, "estimate": cmd_estimate, "cut-ci": cmd_cut_ci,
    "eig-ci": cmd_eig_ci, "refine": cmd_refine, "coverage": cmd_coverage,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args)
    except (UsageError, GraphFormatError) as exc:
        print(f"lapcert {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (LapcertError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"lapcert {args.command}: computation failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
