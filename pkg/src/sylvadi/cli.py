"""Batch front end: generate problems, compute shifts, run strategy sweeps
over one shared shift sequence, and verify stored results.

Exit codes: 0 success, 2 validation failure, 3 non-convergence.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import adi
from .adi import (AdiConfig, AdiState, LowRankSolution, Strategy,
                  SylvesterProblem, residual_gap, run_with_state,
                  true_residual_norm, verify_factor_identity)
from .problems import ProblemSpec
from .shifts import ShiftSequence, heuristic_shifts, pencil_ritz_sets
from .sparse import (SparseFormatError, read_dense_array, read_matrix_market,
                     write_dense_array, write_matrix_market)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NO_CONVERGENCE = 3

_CONFIG_KEYS = {
    "outer_tolerance", "kmax", "xi", "fixed_delta",
    "delta_min_A", "delta_max_A", "delta_min_B", "delta_max_B",
    "gap_budget", "max_inner_iterations", "keep_inner_residuals",
    "precond_kind_A", "precond_droptol_A",
    "precond_kind_B", "precond_droptol_B", "a_mode", "b_mode",
}


class ManifestError(ValueError):
    pass


class RunManifest:
    """Validated description of one experiment sweep.

    JSON fields: ``problem`` (inline generator spec, or ``{"files": {...}}``
    with Matrix Market paths ``a, b, f, g`` and optional ``m, c``),
    ``strategies`` (nonempty list), optional ``config`` overrides, optional
    ``shifts`` (``{"file": path}`` or ``{"pairs": N}``), ``output_dir``,
    ``save_factors``.
    """

    def __init__(self, raw, base_dir="."):
        if not isinstance(raw, dict):
            raise ManifestError("manifest must be a JSON object")
        self.base_dir = base_dir
        self.problem_spec = raw.get("problem")
        if not isinstance(self.problem_spec, dict):
            raise ManifestError("manifest needs a 'problem' object")
        strategies = raw.get("strategies")
        if not strategies:
            raise ManifestError("manifest needs a nonempty 'strategies' list")
        try:
            self.strategies = [Strategy(s) for s in strategies]
        except ValueError as exc:
            raise ManifestError(f"unknown strategy: {exc}")
        self.config = raw.get("config", {})
        unknown = set(self.config) - _CONFIG_KEYS
        if unknown:
            raise ManifestError(f"unknown config keys: {sorted(unknown)}")
        self.shifts = raw.get("shifts", {"pairs": 20})
        self.output_dir = raw.get("output_dir")
        if not self.output_dir:
            raise ManifestError("manifest needs 'output_dir'")
        self.output_dir = self._path(self.output_dir)
        self.save_factors = bool(raw.get("save_factors", False))
        self._check_paths()

    def _path(self, p):
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    def _check_paths(self):
        files = self.problem_spec.get("files")
        if files is not None:
            for key in ("a", "b", "f", "g"):
                if key not in files:
                    raise ManifestError(f"problem.files missing '{key}'")
            for key, path in files.items():
                if not os.path.exists(self._path(path)):
                    raise ManifestError(f"problem file does not exist: {path}")
        shift_file = self.shifts.get("file")
        if shift_file and not os.path.exists(self._path(shift_file)):
            raise ManifestError(f"shift file does not exist: {shift_file}")

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ManifestError(f"cannot read manifest: {exc}")
        return cls(raw, base_dir=os.path.dirname(os.path.abspath(path)))

    def build_problem(self):
        files = self.problem_spec.get("files")
        if files is None:
            spec = ProblemSpec(
                dimension_A=self.problem_spec.get(
                    "dimension_A", self.problem_spec.get("dimension", 3)),
                n0_A=self.problem_spec["n0_A"],
                dimension_B=self.problem_spec.get(
                    "dimension_B", self.problem_spec.get("dimension", 3)),
                n0_B=self.problem_spec["n0_B"],
                r=self.problem_spec.get("r", 1),
                seed=self.problem_spec.get("seed", 0),
                omega_A=self.problem_spec.get("omega_A"),
                omega_B=self.problem_spec.get("omega_B"),
            )
            A, B, f, g = spec.build()
            return SylvesterProblem(A=A, B=B, f=f, g=g)
        A = read_matrix_market(self._path(files["a"]))
        B = read_matrix_market(self._path(files["b"]))
        M = read_matrix_market(self._path(files["m"])) if "m" in files else None
        C = read_matrix_market(self._path(files["c"])) if "c" in files else None
        f = read_dense_array(self._path(files["f"]))
        g = read_dense_array(self._path(files["g"]))
        return SylvesterProblem(A=A, B=B, f=f, g=g, M=M, C=C)

    def make_config(self, strategy):
        return AdiConfig(strategy=strategy, **self.config)


def _write_problem(problem, outdir):
    pdir = os.path.join(outdir, "problem")
    os.makedirs(pdir, exist_ok=True)
    write_matrix_market(problem.A, os.path.join(pdir, "A.mtx"))
    write_matrix_market(problem.B, os.path.join(pdir, "B.mtx"))
    if problem.M is not None:
        write_matrix_market(problem.M, os.path.join(pdir, "M.mtx"))
    if problem.C is not None:
        write_matrix_market(problem.C, os.path.join(pdir, "C.mtx"))
    write_dense_array(problem.f, os.path.join(pdir, "f.mtx"))
    write_dense_array(problem.g, os.path.join(pdir, "g.mtx"))


def _load_problem(outdir):
    pdir = os.path.join(outdir, "problem")
    A = read_matrix_market(os.path.join(pdir, "A.mtx"))
    B = read_matrix_market(os.path.join(pdir, "B.mtx"))
    M = (read_matrix_market(os.path.join(pdir, "M.mtx"))
         if os.path.exists(os.path.join(pdir, "M.mtx")) else None)
    C = (read_matrix_market(os.path.join(pdir, "C.mtx"))
         if os.path.exists(os.path.join(pdir, "C.mtx")) else None)
    f = read_dense_array(os.path.join(pdir, "f.mtx"))
    g = read_dense_array(os.path.join(pdir, "g.mtx"))
    return SylvesterProblem(A=A, B=B, f=f, g=g, M=M, C=C)


def _compute_shifts(problem, npairs):
    ritz_a = pencil_ritz_sets(problem.A, problem.M)
    ritz_b = pencil_ritz_sets(problem.B, problem.C)
    return heuristic_shifts(ritz_a, ritz_b, npairs=npairs)


def _prepare_shifts(manifest, problem, outdir):
    """Resolve the shift sequence and serialize it once; every strategy then
    loads the same file so paired runs share bit-identical shifts."""
    shift_path = os.path.join(outdir, "shifts.json")
    src = manifest.shifts.get("file")
    if src:
        with open(manifest._path(src)) as fh:
            payload = fh.read()
        with open(shift_path, "w") as fh:
            fh.write(payload)
    else:
        seq = _compute_shifts(problem, int(manifest.shifts.get("pairs", 20)))
        seq.to_json(shift_path)
    return ShiftSequence.from_json(shift_path)


def _save_diagnostics(state, sdir, r):
    ddir = os.path.join(sdir, "diagnostics")
    os.makedirs(ddir, exist_ok=True)
    write_dense_array(state.S_A(), os.path.join(ddir, "S_A.mtx"))
    write_dense_array(state.S_B(), os.path.join(ddir, "S_B.mtx"))
    write_dense_array(state.w, os.path.join(ddir, "w.mtx"))
    write_dense_array(state.t, os.path.join(ddir, "t.mtx"))
    meta = {
        "r": r,
        "u": state.u,
        "v": state.v,
        "gammas": [[z.real, z.imag] for z in state.gammas],
        "shift_history": [[[a.real, a.imag], [b.real, b.imag]]
                          for a, b in state.shift_history],
    }
    with open(os.path.join(ddir, "state.json"), "w") as fh:
        json.dump(meta, fh, indent=2)


def _load_diagnostics(problem, sdir, solution):
    ddir = os.path.join(sdir, "diagnostics")
    if not os.path.isdir(ddir):
        return None
    with open(os.path.join(ddir, "state.json")) as fh:
        meta = json.load(fh)
    state = AdiState.initial(problem, keep_inner_residuals=True)
    state.Z = solution.Z
    state.Y = solution.Y
    state.gammas = [complex(re, im) for re, im in meta["gammas"]]
    state.shift_history = [(complex(a[0], a[1]), complex(b[0], b[1]))
                           for a, b in meta["shift_history"]]
    state.u = meta["u"]
    state.v = meta["v"]
    state.k = len(state.gammas)
    state.w = read_dense_array(os.path.join(ddir, "w.mtx"))
    state.t = read_dense_array(os.path.join(ddir, "t.mtx"))
    r = meta["r"]
    S_A = read_dense_array(os.path.join(ddir, "S_A.mtx"))
    S_B = read_dense_array(os.path.join(ddir, "S_B.mtx"))
    state.inner_residuals_A = [S_A[:, i * r:(i + 1) * r] for i in range(state.k)]
    state.inner_residuals_B = [S_B[:, i * r:(i + 1) * r] for i in range(state.k)]
    return state


def cmd_solve(args):
    try:
        manifest = RunManifest.load(args.manifest)
        problem = manifest.build_problem()
    except (ManifestError, SparseFormatError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    outdir = manifest.output_dir
    os.makedirs(outdir, exist_ok=True)
    _write_problem(problem, outdir)
    t_shifts = time.perf_counter()
    shifts = _prepare_shifts(manifest, problem, outdir)
    shift_ms = 1000.0 * (time.perf_counter() - t_shifts)

    summary = {
        "dim": [problem.n, problem.m],
        "r": problem.r,
        "shift_ms": shift_ms,
        "strategies": {},
    }
    all_converged = True
    fixed_wall = None
    for strategy in manifest.strategies:
        config = manifest.make_config(strategy)
        solution, report, state = run_with_state(problem, config, shifts)
        sdir = os.path.join(outdir, strategy.value)
        os.makedirs(sdir, exist_ok=True)
        report.to_csv(os.path.join(sdir, "report.csv"))
        if manifest.save_factors:
            solution.save(sdir)
            if config.keep_inner_residuals:
                _save_diagnostics(state, sdir, problem.r)
        true_res = true_residual_norm(problem, solution)
        entry = {
            "outer_iters": report.outer_iterations,
            "dim": [problem.n, problem.m],
            "converged": report.converged,
            "scaled_computed_residual": report.final_scaled_residual,
            "scaled_true_residual": true_res / report.rhs_norm,
            "sum_inner_A": report.sum_inner_A,
            "sum_inner_B": report.sum_inner_B,
            "wall_ms": report.wall_ms,
            "savings_vs_fixed": None,
        }
        summary["strategies"][strategy.value] = entry
        all_converged = all_converged and report.converged
        if strategy is Strategy.FIXED:
            fixed_wall = report.wall_ms
        print(f"{strategy.value}: outer={report.outer_iterations} "
              f"scaled_true_res={entry['scaled_true_residual']:.3e} "
              f"innerA={entry['sum_inner_A']} innerB={entry['sum_inner_B']} "
              f"wall={report.wall_ms:.1f}ms"
              + ("" if report.converged else "  [NOT CONVERGED]"))

    if fixed_wall:
        for name, entry in summary["strategies"].items():
            if name != Strategy.FIXED.value:
                entry["savings_vs_fixed"] = 1.0 - entry["wall_ms"] / fixed_wall
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    return EXIT_OK if all_converged else EXIT_NO_CONVERGENCE


def cmd_gen(args):
    try:
        spec = ProblemSpec.from_json(args.spec)
        A, B, f, g = spec.build()
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    os.makedirs(args.out, exist_ok=True)
    write_matrix_market(A, os.path.join(args.out, "A.mtx"))
    write_matrix_market(B, os.path.join(args.out, "B.mtx"))
    write_dense_array(f, os.path.join(args.out, "f.mtx"))
    write_dense_array(g, os.path.join(args.out, "g.mtx"))
    print(f"wrote A({A.nrows}x{A.ncols}), B({B.nrows}x{B.ncols}), "
          f"f, g to {args.out}")
    return EXIT_OK


def cmd_shifts(args):
    try:
        A = read_matrix_market(args.a)
        B = read_matrix_market(args.b)
        M = read_matrix_market(args.m) if args.m else None
        C = read_matrix_market(args.c) if args.c else None
        ritz_a = pencil_ritz_sets(A, M)
        ritz_b = pencil_ritz_sets(B, C)
        seq = heuristic_shifts(ritz_a, ritz_b, npairs=args.pairs)
    except (OSError, SparseFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    seq.to_json(args.out)
    print(f"wrote {len(seq.pairs)} shift pairs to {args.out}")
    return EXIT_OK


def cmd_verify(args):
    try:
        problem = _load_problem(args.dir)
    except (OSError, SparseFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    rhs_norm = problem.rhs_norm()
    results = {}
    for name in sorted(os.listdir(args.dir)):
        sdir = os.path.join(args.dir, name)
        if not os.path.isfile(os.path.join(sdir, "Z.mtx")):
            continue
        solution = LowRankSolution.load(sdir, r=problem.r)
        true_res = true_residual_norm(problem, solution)
        entry = {"scaled_true_residual": true_res / rhs_norm}
        state = _load_diagnostics(problem, sdir, solution)
        if state is not None:
            gap = residual_gap(problem, state)
            entry["residual_gap"] = gap
            entry["gap_estimate_u_plus_v"] = state.u + state.v
            entry["gap_bounded_by_estimate"] = bool(
                gap <= state.u + state.v + 1e-10 * rhs_norm)
            entry["factor_identity_defect"] = verify_factor_identity(
                problem, state)
        results[name] = entry
        print(f"{name}: " + json.dumps(entry))
    if not results:
        print("error: no solution factors found (run solve with "
              "save_factors)", file=sys.stderr)
        return EXIT_VALIDATION
    with open(os.path.join(args.dir, "verify.json"), "w") as fh:
        json.dump(results, fh, indent=2)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sylvadi",
        description="Low-rank ADI solvers for sparse generalized Sylvester "
                    "equations with dynamic inner tolerances.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run a strategy sweep from a manifest")
    p_solve.add_argument("--manifest", required=True)
    p_solve.set_defaults(func=cmd_solve)

    p_gen = sub.add_parser("gen", help="generate a test problem")
    p_gen.add_argument("--spec", required=True)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen)

    p_shifts = sub.add_parser("shifts", help="compute heuristic shift pairs")
    p_shifts.add_argument("--a", required=True)
    p_shifts.add_argument("--b", required=True)
    p_shifts.add_argument("--m", default=None)
    p_shifts.add_argument("--c", default=None)
    p_shifts.add_argument("--pairs", type=int, default=20)
    p_shifts.add_argument("--out", required=True)
    p_shifts.set_defaults(func=cmd_shifts)

    p_verify = sub.add_parser("verify", help="recompute diagnostics for stored results")
    p_verify.add_argument("--dir", required=True)
    p_verify.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    threads = os.environ.get("SYLVADI_NUM_THREADS")
    if threads:
        os.environ.setdefault("OMP_NUM_THREADS", threads)
        os.environ.setdefault("NUMBA_NUM_THREADS", threads)
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
