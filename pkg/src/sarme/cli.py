"""Command-line interface: fit | simulate | embed.

All numerics run through the library; the CLI only parses files and
serializes reports, so its results are byte-identical to direct API calls.
Exit codes: 0 success, 2 file/parse/schema problems, 3 estimation failures
(with a machine-readable error JSON on stdout).
"""

from __future__ import annotations

import argparse
import csv
import importlib.resources
import json
import sys

import numpy as np

from . import estimator as est
from . import mecov, simgen, weights as wmod
from .design import ObservedDesign, assemble_omega, shared_omega
from .exceptions import (
    ConfigError,
    DegenerateDistanceError,
    InvalidWeightsError,
    SarMEError,
)

# weight-file problems are input errors (exit 2), not estimation failures
_INPUT_ERRORS = (OSError, ValueError, InvalidWeightsError, DegenerateDistanceError)

REPORT_SCHEMA = 1


# ---------------------------------------------------------------------------
# serialization


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        # full round-trip precision (17 significant digits)
        return float(f"{float(obj):.17g}")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def report_json(payload: dict) -> str:
    return json.dumps(_to_jsonable(payload), indent=2, allow_nan=True)


def _emit(payload: dict, path: str | None):
    text = report_json(payload)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _fail(code: int, error_code: str, message: str, path: str | None = None) -> int:
    payload = {"schema": REPORT_SCHEMA, "error": {"code": error_code, "message": message}}
    print(report_json(payload))
    if path:
        _emit(payload, path)
    return code


# ---------------------------------------------------------------------------
# file loading helpers (exit-2 territory)


def _read_table(path: str):
    """CSV with a header row of column names; returns (names, float array)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    try:
        float(header[0])
    except ValueError:
        data = rows[1:]
    else:  # headerless numeric file
        header = [f"c{j + 1}" for j in range(len(rows[0]))]
        data = rows
    arr = np.array([[float(v) for v in row] for row in data], dtype=float)
    return [h.strip() for h in header], arr


def _read_vector(path: str) -> np.ndarray:
    names, arr = _read_table(path)
    if arr.ndim != 2 or arr.shape[1] != 1:
        raise ValueError(f"{path}: expected a single column, got {arr.shape[1]}")
    return arr[:, 0]


def _load_weights(args) -> wmod.SpatialWeights:
    fmt = args.weights_format
    if fmt == "dense":
        return wmod.load_dense_csv(args.weights)
    if fmt == "edgelist":
        return wmod.load_edgelist_csv(args.weights)
    if args.knn is not None:
        scheme = {"kind": "knn", "k": args.knn}
    elif args.cutoff_km is not None:
        scheme = {"kind": "cutoff", "radius_km": args.cutoff_km,
                  "exponent": args.idw_exponent}
    else:
        raise ValueError("coords format requires --knn or --cutoff-km")
    return wmod.load_coordinates_csv(args.weights, scheme)


def _add_weights_args(sub):
    sub.add_argument("--weights", required=True, help="weights file")
    sub.add_argument("--weights-format", choices=("dense", "edgelist", "coords"),
                     default="dense")
    sub.add_argument("--knn", type=int, default=None,
                     help="k nearest neighbours (coords format)")
    sub.add_argument("--cutoff-km", type=float, default=None,
                     help="distance cutoff in km (coords format)")
    sub.add_argument("--idw-exponent", type=float, default=0.0,
                     help="inverse-distance weight exponent (coords format)")


def _load_replicates(path: str, colnames: list):
    """Long format obs_id,rep_id,<value columns>; returns ReplicateSet."""
    names, arr = _read_table(path)
    if len(names) < 3 or names[0] != "obs_id" or names[1] != "rep_id":
        raise ValueError(f"{path}: expected header obs_id,rep_id,<columns>")
    value_names = names[2:]
    missing = [c for c in colnames if c not in value_names]
    if missing:
        raise ValueError(f"{path}: missing replicate columns {missing}")
    cols = [value_names.index(c) for c in colnames]
    obs = arr[:, 0].astype(int)
    rep = arr[:, 1].astype(int)
    obs_ids = np.unique(obs)
    rep_ids = np.unique(rep)
    n, k, d1 = obs_ids.size, rep_ids.size, len(colnames)
    values = np.full((n, k, d1), np.nan)
    oi = {v: i for i, v in enumerate(obs_ids)}
    ri = {v: i for i, v in enumerate(rep_ids)}
    values[[oi[o] for o in obs], [ri[r] for r in rep]] = arr[:, 2:][:, cols]
    if np.isnan(values).any():
        raise ValueError(f"{path}: incomplete replicate grid (n x k entries required)")
    return mecov.ReplicateSet(values), obs_ids


def _load_validation(path: str, colnames: list):
    """Paired columns true_<name>, proxy_<name>; returns (U_val, proxy_val)."""
    names, arr = _read_table(path)
    true_cols, proxy_cols = [], []
    for c in colnames:
        for prefix, bucket in (("true_", true_cols), ("proxy_", proxy_cols)):
            col = prefix + c
            if col not in names:
                raise ValueError(f"{path}: missing column {col!r}")
            bucket.append(names.index(col))
    return arr[:, true_cols], arr[:, proxy_cols]


def _load_delta(path: str, d1: int, n: int):
    """Shared d1 x d1 block, or n stacked blocks ((n*d1) x d1)."""
    _, arr = _read_table(path)
    if arr.shape == (d1, d1):
        return arr, None
    if arr.shape == (n * d1, d1):
        return None, [arr[i * d1:(i + 1) * d1] for i in range(n)]
    raise ValueError(f"{path}: expected {d1}x{d1} (shared) or {n * d1}x{d1} (stacked), "
                     f"got {arr.shape}")


def _load_latent_delta(path: str, d1: int, n: int):
    names, arr = _read_table(path)
    if arr.shape[1] == d1 * d1 + 1:  # leading obs_id column
        arr = arr[np.argsort(arr[:, 0]), 1:]
    if arr.shape != (n, d1 * d1):
        raise ValueError(f"{path}: expected {n} rows of {d1 * d1} covariance entries")
    return [arr[i].reshape(d1, d1) for i in range(n)]


# ---------------------------------------------------------------------------
# fit


def cmd_fit(args) -> int:
    try:
        Y = _read_vector(args.outcome)
        colnames, X = _read_table(args.covariates)
        weights = _load_weights(args)
    except _INPUT_ERRORS as exc:
        return _fail(2, "file-error", str(exc), args.output)

    error_prone = [c.strip() for c in args.error_prone.split(",")] if args.error_prone else []
    missing = [c for c in error_prone if c not in colnames]
    if missing:
        return _fail(2, "file-error", f"--error-prone columns not found: {missing}",
                     args.output)
    clean = [c for c in colnames if c not in error_prone]
    order = [colnames.index(c) for c in error_prone + clean]
    # keep the design C-contiguous so BLAS results match direct API calls bit
    # for bit regardless of the column reordering
    X = np.ascontiguousarray(X[:, order])
    d1, d2 = len(error_prone), len(clean)
    n = Y.shape[0]
    if X.shape[0] != n or weights.n != n:
        return _fail(2, "file-error",
                     f"row mismatch: outcome {n}, covariates {X.shape[0]}, "
                     f"weights {weights.n}", args.output)

    correction, se_kind = "none", "sandwich"
    me = None
    try:
        if args.replicates:
            reps, _ = _load_replicates(args.replicates, error_prone)
            if reps.n != n:
                raise ValueError("replicates cover a different number of observations")
            u_tilde, delta_hat, C_hat = mecov.estimate_from_replicates(reps)
            X = np.column_stack([u_tilde, X[:, d1:]])
            me = shared_omega(delta_hat, d2=d2, n=n, C_delta=C_hat)
            correction, se_kind = "replicates", "inflated"
        elif args.validation:
            U_val, proxy_val = _load_validation(args.validation, error_prone)
            delta_hat = mecov.calibrate_validation(U_val, proxy_val)
            me = shared_omega(delta_hat, d2=d2, n=n)
            correction = "validation"
        elif args.latent_u:
            _, U_hat = _read_table(args.latent_u)
            if U_hat.shape != (n, d1):
                raise ValueError(f"--latent-u: expected shape {(n, d1)}, got {U_hat.shape}")
            X = np.column_stack([U_hat, X[:, d1:]])
            me = assemble_omega(_load_latent_delta(args.latent_delta, d1, n), d2=d2)
            correction = "latent-embedding"
        elif args.delta:
            shared, stacked = _load_delta(args.delta, d1, n)
            me = shared_omega(shared, d2=d2, n=n) if shared is not None \
                else assemble_omega(stacked, d2=d2)
            correction = "known-delta"
    except (OSError, ValueError) as exc:
        return _fail(2, "file-error", str(exc), args.output)
    except SarMEError as exc:
        return _fail(3, exc.code, str(exc), args.output)

    design = ObservedDesign(X, d1=d1, d2=d2, column_names=tuple(error_prone + clean))
    rho_interval = None
    if args.rho_interval:
        try:
            lo, hi = (float(v) for v in args.rho_interval.split(","))
        except ValueError:
            return _fail(2, "file-error", "--rho-interval expects 'lo,hi'", args.output)
        rho_interval = (lo, hi)

    try:
        result = est.fit_meqmle(Y, weights, design, me,
                                rho_interval=rho_interval, method=args.method)
    except SarMEError as exc:
        return _fail(3, exc.code, str(exc), args.output)

    payload = fit_report(result, design, correction=correction, se=se_kind)
    _emit(payload, args.output)
    return 0


def fit_report(result: est.FitResult, design: ObservedDesign, *,
               correction: str, se: str) -> dict:
    """Assemble the versioned JSON fit report (shared by CLI and tests)."""
    names = list(design.column_names) + ["rho", "sigma2"]
    theta = result.params.as_vector()
    ses = result.std_errors
    z = 1.959963984540054
    return {
        "schema": REPORT_SCHEMA,
        "command": "fit",
        "correction": correction,
        "se": se,
        "n": design.n, "d1": design.d1, "d2": design.d2,
        "parameters": names,
        "estimates": {k: v for k, v in zip(names, theta)},
        "std_errors": {k: v for k, v in zip(names, ses)},
        "conf_int_95": {k: [v - z * s, v + z * s]
                        for k, v, s in zip(names, theta, ses)},
        "loglik": result.loglik,
        "optimizer": dict(result.optimizer),
        "warnings": list(result.warnings),
    }


# ---------------------------------------------------------------------------
# simulate


def preset_path(name: str):
    return importlib.resources.files("sarme").joinpath("presets", name + ".json")


def cmd_simulate(args) -> int:
    try:
        if args.preset:
            raw = json.loads(preset_path(args.preset).read_text())
        else:
            with open(args.config) as fh:
                raw = json.load(fh)
    except OSError as exc:
        return _fail(2, "file-error", str(exc))
    except json.JSONDecodeError as exc:
        return _fail(2, "invalid-config", f"config: invalid JSON ({exc})")
    if args.seed is not None:
        raw["seed"] = args.seed
    if "seed" not in raw:
        return _fail(2, "invalid-config",
                     "seed: required (pass --seed or set it in the config)")
    try:
        cfg = simgen.config_from_dict(raw)
    except ConfigError as exc:
        return _fail(2, exc.code, str(exc))

    try:
        summary = simgen.run_experiment(cfg, n_workers=args.threads,
                                        keep_raw=bool(args.raw_csv))
    except SarMEError as exc:
        return _fail(3, exc.code, str(exc))

    if args.csv:
        summary.to_csv(args.csv)
    if args.json:
        summary.to_json(args.json)
    if args.raw_csv:
        summary.dump_raw_csv(args.raw_csv)
    _print_summary_table(summary)
    return 0


def _print_summary_table(summary: simgen.ExperimentSummary):
    header = f"{'estimator':<12} {'n':>5} {'tau':>5} {'param':<8} " \
             f"{'bias':>10} {'sd':>10} {'mean se':>10} {'cover95':>8} {'fail':>5}"
    print(header)
    print("-" * len(header))
    for row in summary.rows:
        tau = "" if row["tau"] is None else f"{row['tau']:.2f}"
        print(f"{row['estimator']:<12} {row['n']:>5} {tau:>5} {row['parameter']:<8} "
              f"{row['mean_bias']:>10.4f} {row['empirical_sd']:>10.4f} "
              f"{row['mean_estimated_se']:>10.4f} {row['coverage_95']:>8.3f} "
              f"{row['n_fail']:>5}")
    for key, codes in summary.failures.items():
        print(f"failures {key}: {codes}")


# ---------------------------------------------------------------------------
# embed


def cmd_embed(args) -> int:
    try:
        weights = _load_weights(args)
    except _INPUT_ERRORS as exc:
        return _fail(2, "file-error", str(exc))
    try:
        emb = mecov.ase_embed(weights, args.d)
        deltas = mecov.rdpg_row_covariances(emb)
    except SarMEError as exc:
        return _fail(3, exc.code, str(exc))
    except ValueError as exc:
        return _fail(2, "file-error", str(exc))

    n, d = emb.U_hat.shape
    u_path = args.output_prefix + "_u.csv"
    delta_path = args.output_prefix + "_delta.csv"
    with open(u_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"u{j + 1}" for j in range(d)])
        for row in emb.U_hat:
            writer.writerow([repr(float(v)) for v in row])
    with open(delta_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["obs_id"] + [f"d{a + 1}{b + 1}" for a in range(d) for b in range(d)])
        for i, mat in enumerate(deltas):
            writer.writerow([i] + [repr(float(v)) for v in mat.ravel()])
    print(report_json({"schema": REPORT_SCHEMA, "command": "embed", "n": n, "d": d,
                       "eigenvalues": emb.singular_values,
                       "outputs": {"u": u_path, "delta": delta_path}}))
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sarme",
        description="Measurement-error-corrected QML estimation for spatial "
                    "autoregressive models")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker count for Monte Carlo replications")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit the corrected SAR model from CSV inputs")
    fit.add_argument("--outcome", required=True, help="single-column outcome CSV")
    fit.add_argument("--covariates", required=True, help="covariate CSV with header")
    _add_weights_args(fit)
    fit.add_argument("--error-prone", default="",
                     help="comma-separated covariate names measured with error")
    fit.add_argument("--delta", help="known error covariance CSV (shared or stacked)")
    fit.add_argument("--replicates", help="replicate CSV: obs_id,rep_id,<columns>")
    fit.add_argument("--validation", help="validation CSV: true_*/proxy_* columns")
    fit.add_argument("--latent-u", help="embedded positions CSV (from `sarme embed`)")
    fit.add_argument("--latent-delta", help="per-row covariance CSV (from `sarme embed`)")
    fit.add_argument("--rho-interval", help="search interval 'lo,hi'")
    fit.add_argument("--method", choices=("brent", "newton"), default="brent")
    fit.add_argument("--output", help="write the JSON report here (default stdout)")
    fit.set_defaults(func=cmd_fit)

    sim = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    group = sim.add_mutually_exclusive_group(required=True)
    group.add_argument("--config", help="experiment config JSON")
    group.add_argument("--preset", help="bundled preset name (e.g. paper-fig1)")
    sim.add_argument("--seed", type=int, default=None, help="override the config seed")
    sim.add_argument("--csv", help="write the long-format summary CSV here")
    sim.add_argument("--json", help="write the summary JSON here")
    sim.add_argument("--raw-csv", help="write per-replication raw estimates here")
    sim.set_defaults(func=cmd_simulate)

    emb = sub.add_parser("embed", help="adjacency spectral embedding with row covariances")
    _add_weights_args(emb)
    emb.add_argument("-d", type=int, required=True, help="embedding dimension")
    emb.add_argument("--output-prefix", required=True,
                     help="writes <prefix>_u.csv and <prefix>_delta.csv")
    emb.set_defaults(func=cmd_embed)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
