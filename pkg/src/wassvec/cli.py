"""Command line front end: ``wassvec {gen,eigen,singular,check,plot}``.

Exit codes: 0 success, 2 usage or invalid input, 3 numerical failure
(non-convergence, degenerate iterates, failed solver), 4 I/O error.
"""

from __future__ import annotations

import argparse
import gzip
import struct
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__, plots
from .core import Dataset, linf_norm
from .data import (IDX_IMAGES, DataMatrix, FormatError, Template, block_dataset,
                   canonical_normalization, filter_classes, matrix_to_csv, mean_scale_family,
                   read_csv, read_idx, read_idx_labels, read_matrix_csv, scrna_preprocess,
                   torus_dataset_1d, torus_dataset_2d)
from .distance_map import BACKENDS, PhiConfig, phi
from .embedding import EigenSolverError, classical_mds, cone_membership, pca_eigencosts, phi_infty
from .entropic_ot import SinkhornConfig, SinkhornConvergenceError, bistochastic_scaling
from .exact_ot import SolverError
from .report import RunReport
from .spectral import (CONVERGED, IterationConfig, power_eigen, power_singular, trace_to_csv,
                       uniqueness_certificate)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class UsageError(ValueError):
    pass


# ------------------------------------------------------------------ helpers

class _Timer:
    def __init__(self):
        self.phases: Dict[str, float] = {}

    def __call__(self, name):
        timer = self

        class _Phase:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                timer.phases[name] = timer.phases.get(name, 0.0) + time.perf_counter() - self.t

        return _Phase()


def _is_idx(path) -> bool:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        head = fh.read(4)
    return len(head) == 4 and struct.unpack(">I", head)[0] == IDX_IMAGES


def _load(path, header=False, row_names=False) -> DataMatrix:
    if _is_idx(path):
        return read_idx(path)
    return read_csv(path, header=header, row_names=row_names)


def _csv_list(text: Optional[str], cast=float) -> Optional[List]:
    if text is None:
        return None
    try:
        return [cast(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"cannot parse list {text!r}") from None


def _phi_cfg(args, store=False) -> PhiConfig:
    return PhiConfig(
        tau=args.tau,
        backend=args.backend,
        sinkhorn=SinkhornConfig(epsilon=args.eps, max_iterations=args.sinkhorn_max_iter),
        store_couplings=store,
        threads=args.threads,
    )


def _iter_cfg(args) -> IterationConfig:
    return IterationConfig(initial_cost=args.init, seed=args.seed, tolerance_hilbert=args.tol,
                           tolerance_residual=args.tol, max_iterations=args.max_iter)


def _trace_dicts(trace):
    out = []
    for r in trace:
        d = {"iteration": r.iteration, "hilbert_delta": r.hilbert_delta,
             "residual": r.residual, "lambda": r.lam}
        if r.mu is not None:
            d["mu"] = r.mu
        out.append(d)
    return out


def _cone_dict(C):
    rep = cone_membership(C)
    return {"in_cone": rep.in_cone, "dimension": rep.dimension, "min_eigenvalue": rep.min_eigenvalue}


class _Writer:
    """Collects output files; everything is written after computation."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.files: Dict[str, str] = {}

    def add(self, name: str, text: str):
        self.files[name] = text

    def csv_with_svg(self, stem: str, csv_text: str, kind: str, svg_name: str):
        self.add(f"{stem}.csv", csv_text)
        self.add(svg_name, render(kind, csv_text, stem))

    def flush(self) -> Dict[str, str]:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name, text in self.files.items():
            p = self.out_dir / name
            p.write_text(text)
            paths[name] = str(p)
        return paths


def render(kind: str, csv_text: str, title: str) -> str:
    """The SVG the tool writes for a CSV of the given kind."""
    if kind == "trace":
        return plots.convergence_from_csv(csv_text, title=title)
    if kind == "heatmap":
        return plots.heatmap_from_csv(csv_text, title=title, order="hierarchical")
    if kind == "scatter":
        return plots.scatter_from_csv(csv_text, title=title)
    raise UsageError(f"unknown plot kind {kind!r}")


def _mds_csv(M, names, dims) -> str:
    X = classical_mds(np.asarray(M) ** 2, dims)
    header = ["id"] + ["x", "y", "z"][:dims]
    rows = [[names[i]] + [repr(float(v)) for v in X[i]] for i in range(X.shape[0])]
    return "\n".join(",".join(r) for r in [header] + rows) + "\n"


def _finish(writer: Optional[_Writer], report: RunReport, timer: _Timer) -> int:
    """Write every collected file, then the report listing them."""
    if writer is not None:
        with timer("write"):
            paths = writer.flush()
        paths["report.json"] = str(writer.out_dir / "report.json")
        report.artifacts = paths
    report.timing = {k: float(v) for k, v in timer.phases.items()}
    text = report.to_json()
    if writer is not None:
        Path(report.artifacts["report.json"]).write_text(text)
    return report.exit_code


def _dedupe(X: np.ndarray):
    """Indices of the first occurrence of each distinct column."""
    seen, keep = set(), []
    for j in range(X.shape[1]):
        key = X[:, j].tobytes()
        if key not in seen:
            seen.add(key)
            keep.append(j)
    return np.array(keep, dtype=np.int64)


# ------------------------------------------------------------------ commands

def cmd_gen(args) -> int:
    kind = args.kind
    if kind == "torus1d":
        values = torus_dataset_1d(Template.parse(args.template), args.n).columns
    elif kind == "torus2d":
        values = torus_dataset_2d(Template.parse(args.template), args.side).columns
    elif kind == "meanscale":
        means = _csv_list(args.means) or list(np.linspace(0.0, 0.8, 5))
        scales = _csv_list(args.scales) or list(np.linspace(0.05, 0.15, 5))
        values = mean_scale_family(args.n, means, scales).values
    else:
        sizes = []
        for tok in (args.sizes or "").split(","):
            try:
                a, b = tok.lower().split("x")
                sizes.append((int(a), int(b)))
            except ValueError:
                raise UsageError(f"bad block size {tok!r}; expected e.g. 2x3") from None
        values = block_dataset(sizes, args.seed).values
    text = matrix_to_csv(values)
    Path(args.out).write_text(text)
    print(f"wrote {values.shape[0]}x{values.shape[1]} matrix to {args.out}")
    return EXIT_OK


def cmd_eigen(args) -> int:
    timer = _Timer()
    with timer("load"):
        U = _load(args.input, args.header, args.row_names)
        X = U.values
        if args.normalize:
            s = X.sum(axis=0)
            if np.any(s <= 0):
                raise UsageError(f"column {int(np.argmin(s))} sums to zero")
            X = X / s
        A = Dataset(X)
    with timer("iterate"):
        res = power_eigen(A, _phi_cfg(args), _iter_cfg(args))
    results = {
        "lambda": res.lam, "n_iter": res.n_iter, "residual": res.residual,
        "hilbert_delta": res.hilbert_delta, "trace": _trace_dicts(res.trace),
        "uniqueness": "not_checked", "cone": {"C": _cone_dict(res.cost_C)},
    }
    if args.backend == "exact" and res.status == CONVERGED and not args.no_uniqueness:
        with timer("uniqueness"):
            rep = uniqueness_certificate(A, res.cost_C)
        results["uniqueness"] = rep.status
        results["uniqueness_components"] = rep.n_components
    writer = _Writer(Path(args.out_dir))
    writer.csv_with_svg("C_star", matrix_to_csv(res.cost_C), "heatmap", "C_star_heatmap.svg")
    writer.csv_with_svg("trace", trace_to_csv(res.trace), "trace", "convergence.svg")
    code = EXIT_OK if res.status == CONVERGED else EXIT_NUMERIC
    report = RunReport("eigen", res.status, code, __version__, config=_config(args), results=results)
    code = _finish(writer, report, timer)
    print(f"eigen: {res.status} after {res.n_iter} iterations, lambda={res.lam:.12g}")
    return code


def _config(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def cmd_singular(args) -> int:
    timer = _Timer()
    notes = {}
    with timer("load"):
        U = _load(args.input, args.header, args.row_names)
        if args.labels or args.classes or args.samples:
            if args.classes and not args.labels:
                raise UsageError("--classes needs --labels")
            if args.labels:
                labels = read_idx_labels(args.labels) if _is_idx_labels(args.labels) \
                    else np.array([r[0] for r in read_matrix_csv(args.labels)[0]]).astype(np.int64)
            else:
                labels = np.arange(U.shape[1])
            U = filter_classes(U, labels, _csv_list(args.classes, str), args.samples, args.seed)
        if args.preprocess:
            kind, _, k = args.preprocess.partition(":")
            if kind != "scrna" or not k.isdigit():
                raise UsageError(f"unknown preprocessing {args.preprocess!r}; expected scrna:K")
            U = scrna_preprocess(U, int(k))
        X = U.values
        if not args.keep_empty:
            rows = np.nonzero(X.sum(axis=1) > 0)[0]
            cols = np.nonzero(X.sum(axis=0) > 0)[0]
            notes["dropped_empty_rows"] = int(X.shape[0] - rows.size)
            notes["dropped_empty_cols"] = int(X.shape[1] - cols.size)
            U = U.select_rows(rows).select_columns(cols)
        W = U.values
        if args.normalization == "bistochastic":
            W = bistochastic_scaling(W)
        A, B = canonical_normalization(DataMatrix(W, U.row_names, U.col_names))
        keep_c = _dedupe(A.columns)
        keep_r = _dedupe(B.columns)
        notes["dropped_duplicate_cols"] = int(A.m - keep_c.size)
        notes["dropped_duplicate_rows"] = int(B.m - keep_r.size)
        if keep_c.size < A.m or keep_r.size < B.m:
            W = W[np.ix_(keep_r, keep_c)]
            U = U.select_rows(keep_r).select_columns(keep_c)
            A, B = canonical_normalization(DataMatrix(W, U.row_names, U.col_names))
    with timer("iterate"):
        res = power_singular(A, B, _phi_cfg(args), _iter_cfg(args))
    row_ids = U.row_names or [str(i) for i in range(U.shape[0])]
    col_ids = U.col_names or [str(j) for j in range(U.shape[1])]
    results = {
        "lambda": res.lam, "mu": res.mu, "n_iter": res.n_iter, "residual": res.residual,
        "hilbert_delta": res.hilbert_delta, "trace": _trace_dicts(res.trace),
        "uniqueness": "not_checked",
        "cone": {"C": _cone_dict(res.cost_C), "D": _cone_dict(res.cost_D)} if res.cost_D is not None
        else {"C": _cone_dict(res.cost_C)},
        "shape": list(U.shape), **notes,
    }
    writer = _Writer(Path(args.out_dir))
    with timer("embed"):
        writer.csv_with_svg("trace", trace_to_csv(res.trace), "trace", "convergence.svg")
        writer.csv_with_svg("C_star", matrix_to_csv(res.cost_C), "heatmap", "C_star_heatmap.svg")
        writer.csv_with_svg("mds_rows", _mds_csv(res.cost_C, row_ids, args.mds_dims), "scatter", "mds_rows.svg")
        if res.cost_D is not None:
            writer.csv_with_svg("D_star", matrix_to_csv(res.cost_D), "heatmap", "D_star_heatmap.svg")
            writer.csv_with_svg("mds_cols", _mds_csv(res.cost_D, col_ids, args.mds_dims), "scatter", "mds_cols.svg")
    code = EXIT_OK if res.status == CONVERGED else EXIT_NUMERIC
    report = RunReport("singular", res.status, code, __version__, config=_config(args), results=results)
    code = _finish(writer, report, timer)
    print(f"singular: {res.status} after {res.n_iter} iterations, lambda={res.lam:.12g}, mu={res.mu:.12g}")
    return code


def _is_idx_labels(path) -> bool:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        head = fh.read(4)
    return len(head) == 4 and struct.unpack(">I", head)[0] == 0x00000801


def _random_dataset(rng, n, m):
    X = rng.random((n, m)) + 1e-3
    return Dataset(X / X.sum(axis=0))


def _random_cone_cost(rng, n, dim=2):
    P = rng.normal(size=(n, dim))
    C = ((P[:, None, :] - P[None, :, :]) ** 2).sum(axis=-1)
    return C / C.max()


def cmd_check(args) -> int:
    timer = _Timer()
    what = args.what
    rng = np.random.default_rng(args.seed)
    results: dict = {}
    with timer("load"):
        U = _load(args.input, args.header, args.row_names) if args.input else None
        C = read_matrix_csv(args.cost)[0] if args.cost else None
    with timer("check"):
        if what == "uniqueness":
            if U is None:
                raise UsageError("check uniqueness needs an input dataset")
            A = Dataset(U.values / U.values.sum(axis=0))
            if C is None:
                res = power_eigen(A, PhiConfig(tau=args.tau, threads=args.threads))
                if res.status != CONVERGED:
                    raise UsageError(f"power iterations ended with status {res.status}; pass --cost")
                C = res.cost_C
                results["lambda"] = res.lam
            rep = uniqueness_certificate(A, C, face=args.face)
            results.update(uniqueness=rep.status, components=[len(c) for c in rep.components],
                           passed=rep.certified)
            line = f"uniqueness: {rep.status} ({rep.n_components} component(s) over {rep.n_nodes} pairs)"
        elif what == "cone":
            if C is None:
                if U is None:
                    raise UsageError("check cone needs --cost or an input cost matrix")
                C = U.values
            rep = cone_membership(C)
            results.update(cone={"C": {"in_cone": rep.in_cone, "dimension": rep.dimension,
                                       "min_eigenvalue": rep.min_eigenvalue}}, passed=rep.in_cone)
            line = (f"cone: in cone, dimension {rep.dimension}" if rep.in_cone
                    else f"cone: not in cone, <Cz,z> = {rep.quadratic_value:.3g} at the witness")
        elif what == "pca":
            A = Dataset(U.values / U.values.sum(axis=0)) if U is not None else _random_dataset(rng, args.size, args.size)
            pairs = pca_eigencosts(A, min(args.k, A.n))
            rel = [p.residual / linf_norm(p.induced_cost.entries) if linf_norm(p.induced_cost.entries) > 0 else 0.0
                   for p in pairs]
            dims = [cone_membership(p.induced_cost).dimension for p in pairs]
            ok = all(r <= 1e-8 for r in rel) and all(d is not None and d <= 2 for d in dims)
            results.update(eigenvalues=[[p.eigenvalue.real, p.eigenvalue.imag] for p in pairs],
                           relative_residuals=rel, max_relative_residual=max(rel, default=0.0),
                           dimensions=dims, passed=ok)
            line = f"pca: max relative residual {max(rel, default=0.0):.3g} over {len(pairs)} eigencost(s)"
        else:
            gaps = []
            trials = 1 if U is not None else args.trials
            for _ in range(trials):
                A = Dataset(U.values / U.values.sum(axis=0)) if U is not None else _random_dataset(rng, args.size, args.size)
                Cm = C if C is not None else _random_cone_cost(rng, A.n)
                cfg = PhiConfig(backend="entropic", threads=args.threads,
                                sinkhorn=SinkhornConfig(epsilon=args.eps, log_domain=False))
                ref = phi_infty(A, Cm)
                gaps.append(linf_norm(phi(A, Cm, cfg) - ref) / max(linf_norm(ref), np.finfo(float).tiny))
            gap = max(gaps)
            results.update(relative_gaps=gaps, max_relative_gap=gap, passed=bool(gap <= 1e-3))
            line = f"mmd-limit: max relative gap {gap:.3g} at eps={args.eps:g} over {len(gaps)} instance(s)"
    report = RunReport("check", "passed" if results["passed"] else "failed", EXIT_OK, __version__,
                       config=_config(args), results=results)
    writer = _Writer(Path(args.out_dir)) if args.out_dir else None
    code = _finish(writer, report, timer)
    print(line)
    return code


def cmd_plot(args) -> int:
    text = Path(args.csv).read_text()
    title = args.title if args.title is not None else Path(args.csv).stem
    Path(args.out).write_text(render(args.kind, text, title))
    return EXIT_OK


# ------------------------------------------------------------------- parser

def _add_numeric(p, tol=True):
    p.add_argument("--tau", type=float, default=0.0, help="l1 regularization weight")
    p.add_argument("--backend", choices=BACKENDS, default="exact")
    p.add_argument("--eps", type=float, default=1e-2, help="relative entropic regularization")
    p.add_argument("--sinkhorn-max-iter", type=int, default=10000)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--init", choices=("l1", "random"), default="l1")
    p.add_argument("--seed", type=int, default=0)


def _add_io(p):
    p.add_argument("--header", action="store_true", help="CSV input has a header row")
    p.add_argument("--row-names", action="store_true", help="CSV input has a row-name column")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads for pairwise solves (default: WASSVEC_THREADS or all cores)")
    parser = argparse.ArgumentParser(prog="wassvec", description="Wasserstein eigenvectors and singular vectors.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic data matrix")
    g.add_argument("kind", choices=("torus1d", "torus2d", "meanscale", "blocks"))
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=100)
    g.add_argument("--side", type=int, default=15)
    g.add_argument("--template", default="gauss:0.05", help="gauss:S, bimodal:S,GAP or trimodal:S,G1,G2")
    g.add_argument("--means", help="comma-separated means (meanscale)")
    g.add_argument("--scales", help="comma-separated scales (meanscale)")
    g.add_argument("--sizes", default="2x2,2x2", help="block sizes, e.g. 2x3,4x2")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen)

    e = sub.add_parser("eigen", parents=[common], help="Wasserstein eigenvector of a square dataset")
    e.add_argument("input", help="CSV (columns are histograms) or IDX file")
    e.add_argument("--out-dir", required=True)
    e.add_argument("--normalize", action="store_true", help="rescale columns to unit mass")
    e.add_argument("--no-uniqueness", action="store_true", help="skip the uniqueness certificate")
    _add_numeric(e)
    _add_io(e)
    e.set_defaults(func=cmd_eigen)

    s = sub.add_parser("singular", parents=[common], help="Wasserstein singular vectors of a data matrix")
    s.add_argument("input", help="CSV or IDX data matrix (rows: features, columns: samples)")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--normalization", choices=("canonical", "bistochastic"), default="canonical")
    s.add_argument("--preprocess", help="scrna:K (log1p, keep the K most variable rows)")
    s.add_argument("--labels", help="IDX label file or one-column CSV of column labels")
    s.add_argument("--classes", help="comma-separated labels to keep")
    s.add_argument("--samples", type=int, help="number of columns to subsample")
    s.add_argument("--keep-empty", action="store_true", help="fail on all-zero rows/columns instead of dropping them")
    s.add_argument("--mds-dims", type=int, choices=(1, 2, 3), default=2)
    _add_numeric(s)
    _add_io(s)
    s.set_defaults(func=cmd_singular)

    c = sub.add_parser("check", parents=[common], help="diagnostics")
    c.add_argument("what", choices=("uniqueness", "cone", "pca", "mmd-limit"))
    c.add_argument("input", nargs="?", help="dataset CSV (random data when omitted, except for uniqueness)")
    c.add_argument("--cost", help="cost matrix CSV")
    c.add_argument("--tau", type=float, default=0.0)
    c.add_argument("--k", type=int, default=3, help="number of PCA eigencosts")
    c.add_argument("--eps", type=float, default=1e3)
    c.add_argument("--size", type=int, default=4, help="size of random instances")
    c.add_argument("--trials", type=int, default=10)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--face", action="store_true", help="use optimal-face supports in the certificate")
    c.add_argument("--out-dir", help="also write report.json here")
    _add_io(c)
    c.set_defaults(func=cmd_check)

    p = sub.add_parser("plot", help="regenerate an SVG from a CSV written by this tool")
    p.add_argument("kind", choices=("trace", "heatmap", "scatter"))
    p.add_argument("csv")
    p.add_argument("--out", required=True)
    p.add_argument("--title", help="defaults to the CSV file stem")
    p.set_defaults(func=cmd_plot)
    return parser


def _error_report(args, code: int, exc: Exception) -> None:
    """Leave a report behind for failed runs that have an output directory."""
    out_dir = getattr(args, "out_dir", None)
    if not out_dir or args.command not in ("eigen", "singular", "check"):
        return
    report = RunReport(args.command, "error", code, __version__, config=_config(args),
                       results={"error": f"{type(exc).__name__}: {exc}"})
    try:
        path = Path(out_dir)
        path.mkdir(parents=True, exist_ok=True)
        report.artifacts = {"report.json": str(path / "report.json")}
        (path / "report.json").write_text(report.to_json())
    except OSError:
        pass


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, OSError) as exc:
        code, err = EXIT_IO, exc
    except (SinkhornConvergenceError, SolverError, EigenSolverError, FloatingPointError) as exc:
        code, err = EXIT_NUMERIC, exc
    except ValueError as exc:
        parser.print_usage(sys.stderr)
        code, err = EXIT_USAGE, exc
    print(f"error: {err}", file=sys.stderr)
    _error_report(args, code, err)
    return code


if __name__ == "__main__":
    sys.exit(main())
