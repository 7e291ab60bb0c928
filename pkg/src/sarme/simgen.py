"""Data generators and the Monte Carlo experiment harness.

Three study designs are built in:

* "covariate_error": Gaussian covariates observed with additive Gaussian
  error of known covariance; stochastic-block-model network.
* "replicates": same outcome model, but the error covariance is estimated
  from k replicate measurements per unit and the reported standard errors
  include the estimated-covariance inflation.
* "homophily": the network is a random dot product graph whose latent
  positions also enter the outcome equation; fits use spectrally embedded
  positions with (corrected) or without (uncorrected) their estimated
  per-node error covariances.

Reproducibility: every replication draws from its own Philox counter-based
substream keyed by (seed, n index, tau index, replication index), so results
are bit-identical regardless of worker count or execution order.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import estimator as est
from . import mecov
from .design import ObservedDesign, assemble_omega, shared_omega
from .exceptions import (
    ConfigError,
    InvalidCovarianceError,
    InvalidProbabilityError,
    SarMEError,
    SingularSError,
)
from .weights import SpatialWeights, build_row_normalized

SCHEMA_VERSION = 1
VALID_DESIGNS = ("covariate_error", "replicates", "homophily")
VALID_ESTIMATORS = ("corrected", "uncorrected", "ols")


# ---------------------------------------------------------------------------
# generators


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent, order-invariant random stream for one replication."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def balanced_membership(n: int, k: int) -> np.ndarray:
    """Community labels with sizes n//k (+1 for the first n%k blocks)."""
    sizes = np.full(k, n // k)
    sizes[: n % k] += 1
    return np.repeat(np.arange(k), sizes)


def generate_sbm(n: int, k: int, block_probs: np.ndarray,
                 membership, rng: np.random.Generator) -> SpatialWeights:
    """Symmetric binary adjacency with Bernoulli(block_probs[c_i, c_j]) edges."""
    block_probs = np.asarray(block_probs, dtype=float)
    if np.any(block_probs < 0) or np.any(block_probs > 1):
        raise InvalidProbabilityError("block probabilities must lie in [0, 1]")
    if not np.allclose(block_probs, block_probs.T):
        raise InvalidProbabilityError("block probability matrix must be symmetric")
    labels = balanced_membership(n, k) if isinstance(membership, str) else np.asarray(membership)
    P = block_probs[np.ix_(labels, labels)]
    return _bernoulli_graph(P, rng)


def _bernoulli_graph(P: np.ndarray, rng: np.random.Generator) -> SpatialWeights:
    n = P.shape[0]
    upper = np.triu(rng.random((n, n)) < P, 1)
    A = (upper | upper.T).astype(float)
    return build_row_normalized(A)


def generate_covariates(n: int, Sigma_X: np.ndarray, Sigma_xi: np.ndarray,
                        rng: np.random.Generator):
    """True covariates X ~ N(0, Sigma_X) rowwise and the observed
    X_tilde = X + [xi | 0] with xi ~ N(0, Sigma_xi)."""
    Sigma_X = np.asarray(Sigma_X, dtype=float)
    Sigma_xi = np.asarray(Sigma_xi, dtype=float)
    p = Sigma_X.shape[0]
    d1 = Sigma_xi.shape[0]
    X = rng.standard_normal((n, p)) @ _chol(Sigma_X, "Sigma_X").T
    X_tilde = X.copy()
    if d1:
        X_tilde[:, :d1] += rng.standard_normal((n, d1)) @ _chol(Sigma_xi, "Sigma_xi").T
    return X, X_tilde


def _chol(Sigma: np.ndarray, name: str) -> np.ndarray:
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.size == 0:
        return Sigma
    if not np.allclose(Sigma, Sigma.T):
        raise InvalidCovarianceError(f"{name} must be symmetric")
    eigvals, eigvecs = np.linalg.eigh(Sigma)
    if eigvals.min() < -1e-10 * max(1.0, eigvals.max()):
        raise InvalidCovarianceError(f"{name} is not positive semidefinite")
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def generate_sar_outcome(weights: SpatialWeights, X: np.ndarray,
                         params: est.SarParams, rng: np.random.Generator) -> np.ndarray:
    """Y = (I - rho L)^{-1} (X delta + V) with V iid N(0, sigma2)."""
    n = weights.n
    S = np.eye(n) - params.rho * weights.L
    V = np.sqrt(params.sigma2) * rng.standard_normal(n)
    try:
        return np.linalg.solve(S, X @ params.delta + V)
    except np.linalg.LinAlgError as exc:
        raise SingularSError(f"I - rho L is singular at rho={params.rho}") from exc


def latent_positions_from_blocks(block_probs: np.ndarray, d: int) -> np.ndarray:
    """Recover k latent rows U with U U' equal to the given k x k block
    probability matrix (requires it to be PSD of rank <= d)."""
    B = np.asarray(block_probs, dtype=float)
    eigvals, eigvecs = np.linalg.eigh(B)
    if eigvals.min() < -1e-8:
        raise InvalidProbabilityError("block matrix is not positive semidefinite")
    if (eigvals > 1e-8).sum() > d:
        raise InvalidProbabilityError(f"block matrix has rank above {d}")
    top = eigvals[-d:]
    U = eigvecs[:, -d:] * np.sqrt(np.clip(top, 0.0, None))
    if not np.allclose(U @ U.T, B, atol=1e-8):
        raise InvalidProbabilityError("latent factorization failed to reproduce the block matrix")
    return U


# mixing used to correlate the clean covariates with the latent positions in
# the homophily design (the study only states that they are correlated)
_HOMOPHILY_Z_MIX = np.array([[1.0, 0.5], [0.5, 1.0]])
_HOMOPHILY_Z_NOISE = 0.5


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    n_grid: tuple
    n_reps: int
    design: str
    beta: np.ndarray
    gamma: np.ndarray
    rho: float
    sigma2: float
    sigma_x: np.ndarray
    sigma_xi: np.ndarray | None
    network: dict
    estimators: tuple
    tau_grid: tuple | None = None
    tau_base: np.ndarray | None = None
    replicate_k: int = 0
    embed_dim: int = 0

    @property
    def d1(self) -> int:
        return self.beta.shape[0]

    @property
    def d2(self) -> int:
        return self.gamma.shape[0]

    @property
    def true_params(self) -> est.SarParams:
        return est.SarParams(delta=np.concatenate([self.beta, self.gamma]),
                             rho=self.rho, sigma2=self.sigma2)

    @property
    def parameter_names(self) -> tuple:
        return tuple([f"beta{i + 1}" for i in range(self.d1)]
                     + [f"gamma{i + 1}" for i in range(self.d2)]
                     + ["rho", "sigma2"])


def _cov_from_spec(spec, dim_key: str, path: str) -> np.ndarray:
    if isinstance(spec, dict):
        try:
            dim = int(spec[dim_key])
            diag, off = float(spec["diag"]), float(spec["offdiag"])
        except KeyError as exc:
            raise ConfigError(f"{path}: missing field {exc.args[0]!r}") from exc
        return np.full((dim, dim), off) + (diag - off) * np.eye(dim)
    mat = np.asarray(spec, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ConfigError(f"{path}: expected a square matrix or a diag/offdiag spec")
    return mat


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Parse and validate a schema-1 experiment configuration."""
    def fail(path, msg):
        raise ConfigError(f"{path}: {msg}")

    if raw.get("schema") != SCHEMA_VERSION:
        fail("schema", f"expected {SCHEMA_VERSION}, got {raw.get('schema')!r}")
    if "seed" not in raw:
        fail("seed", "a 64-bit seed is required (no silent nondeterminism)")
    seed = int(raw["seed"])
    n_grid = tuple(int(v) for v in raw.get("n_grid", []))
    if not n_grid or any(v < 10 for v in n_grid):
        fail("n_grid", "need at least one sample size >= 10")
    n_reps = int(raw.get("n_reps", 0))
    if n_reps < 1:
        fail("n_reps", "need n_reps >= 1")
    design = raw.get("design", "covariate_error")
    if design not in VALID_DESIGNS:
        fail("design", f"must be one of {VALID_DESIGNS}")
    tp = raw.get("true_params", {})
    for key in ("beta", "gamma", "rho", "sigma2"):
        if key not in tp:
            fail(f"true_params.{key}", "missing")
    beta = np.asarray(tp["beta"], dtype=float).ravel()
    gamma = np.asarray(tp["gamma"], dtype=float).ravel()
    rho = float(tp["rho"])
    sigma2 = float(tp["sigma2"])
    if sigma2 <= 0:
        fail("true_params.sigma2", "must be positive")
    d1, p = beta.shape[0], beta.shape[0] + gamma.shape[0]

    cov = raw.get("covariates", {})
    network = dict(raw.get("network", {}))
    kind = network.get("kind")
    sigma_xi = None
    tau_grid = tau_base = None
    replicate_k = 0
    embed_dim = 0

    if design == "homophily":
        if kind != "rdpg_sbm":
            fail("network.kind", "homophily design requires kind 'rdpg_sbm'")
        embed_dim = int(network.get("d", 0))
        if embed_dim < 1:
            fail("network.d", "embedding dimension required")
        if embed_dim != d1:
            fail("network.d", "embedding dimension must equal len(true_params.beta)")
        block = np.asarray(network.get("block_probs", []), dtype=float)
        if block.ndim != 2 or block.shape[0] != block.shape[1]:
            fail("network.block_probs", "square matrix required")
        sigma_x = _cov_from_spec(cov.get("sigma_x", {"dim": gamma.shape[0], "diag": 1.0, "offdiag": 0.0}),
                                 "dim", "covariates.sigma_x")
        if sigma_x.shape[0] != gamma.shape[0]:
            fail("covariates.sigma_x", "dimension must equal len(gamma) for homophily design")
    else:
        if kind != "sbm":
            fail("network.kind", "expected 'sbm'")
        if "sigma_x" not in cov:
            fail("covariates.sigma_x", "missing")
        sigma_x = _cov_from_spec(cov["sigma_x"], "dim", "covariates.sigma_x")
        if sigma_x.shape[0] != p:
            fail("covariates.sigma_x", f"must be {p} x {p}")
        xi_spec = cov.get("sigma_xi")
        if xi_spec is None:
            fail("covariates.sigma_xi", "missing")
        if isinstance(xi_spec, dict) and "tau_grid" in xi_spec:
            tau_grid = tuple(float(t) for t in xi_spec["tau_grid"])
            tau_base = _cov_from_spec({k: v for k, v in xi_spec.items() if k != "tau_grid"},
                                      "dim", "covariates.sigma_xi")
            sigma_xi = tau_base
        else:
            sigma_xi = _cov_from_spec(xi_spec, "dim", "covariates.sigma_xi")
        if sigma_xi.shape[0] != d1:
            fail("covariates.sigma_xi", f"must be {d1} x {d1}")
        if design == "replicates":
            replicate_k = int(raw.get("replicates", {}).get("k", 0))
            if replicate_k < 2:
                fail("replicates.k", "need k >= 2")

    estimators = tuple(raw.get("estimators", ("corrected", "uncorrected")))
    for name in estimators:
        if name not in VALID_ESTIMATORS:
            fail("estimators", f"unknown estimator {name!r}")
    if not estimators:
        fail("estimators", "need at least one estimator")

    return ExperimentConfig(seed=seed, n_grid=n_grid, n_reps=n_reps, design=design,
                            beta=beta, gamma=gamma, rho=rho, sigma2=sigma2,
                            sigma_x=sigma_x, sigma_xi=sigma_xi, network=network,
                            estimators=estimators, tau_grid=tau_grid, tau_base=tau_base,
                            replicate_k=replicate_k, embed_dim=embed_dim)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from exc
    return config_from_dict(raw)


# ---------------------------------------------------------------------------
# single replication


def _fit_all(cfg: ExperimentConfig, Y, weights, design_obs, me_known, me_estimated):
    """Run every requested estimator; return {name: result-or-error}."""
    out = {}
    for name in cfg.estimators:
        try:
            if name == "corrected":
                me = me_estimated if me_estimated is not None else me_known
                out[name] = est.fit_meqmle(Y, weights, design_obs, me)
            elif name == "uncorrected":
                out[name] = est.fit_qmle_uncorrected(Y, weights, design_obs)
            else:  # ols
                out[name] = _fit_ols(Y, design_obs)
        except (SarMEError, np.linalg.LinAlgError) as exc:
            out[name] = exc
    return out


def _fit_ols(Y, design_obs: ObservedDesign) -> est.FitResult:
    X = design_obs.X_tilde
    n, p = X.shape
    coef, *_ = np.linalg.lstsq(X, Y, rcond=None)
    resid = Y - X @ coef
    sigma2 = float(resid @ resid) / n
    vcov = np.full((p + 2, p + 2), np.nan)
    vcov[:p, :p] = np.linalg.inv(X.T @ X) * sigma2 * n / max(n - p, 1)
    params = est.SarParams(delta=coef, rho=np.nan, sigma2=sigma2)
    se = np.sqrt(np.abs(np.diag(vcov)))
    return est.FitResult(params=params, vcov=vcov, std_errors=se,
                         loglik=np.nan, optimizer={"method": "ols"})


def run_replication(cfg: ExperimentConfig, n: int, tau_index: int, rep: int) -> dict:
    """One Monte Carlo replication; returns per-estimator estimates/SEs."""
    rng = substream(cfg.seed, cfg.n_grid.index(n), tau_index + 1, rep)
    d1, d2 = cfg.d1, cfg.d2
    true = cfg.true_params

    if cfg.design == "homophily":
        net = cfg.network
        block = np.asarray(net["block_probs"], dtype=float)
        d = cfg.embed_dim
        U_rows = latent_positions_from_blocks(block, d)
        labels = balanced_membership(n, block.shape[0])
        U = U_rows[labels]
        weights = _bernoulli_graph(np.clip(U @ U.T, 0.0, 1.0), rng)
        Z = (U @ _HOMOPHILY_Z_MIX[:d2, :d].T
             + _HOMOPHILY_Z_NOISE * rng.standard_normal((n, d2)) @ _chol(cfg.sigma_x, "sigma_x").T)
        Y = generate_sar_outcome(weights, np.column_stack([U, Z]), true, rng)
        emb = mecov.ase_embed(weights, d)
        delta_hats = mecov.rdpg_row_covariances(emb)
        design_obs = ObservedDesign(np.column_stack([emb.U_hat, Z]), d1=d, d2=d2)
        me_known = assemble_omega(delta_hats, d2=d2)
        me_estimated = None
    else:
        net = cfg.network
        sigma_xi = cfg.sigma_xi if tau_index < 0 else cfg.tau_grid[tau_index] * cfg.tau_base
        weights = generate_sbm(n, int(net["k"]),
                               _cov_block_probs(net), "balanced", rng)
        X, X_tilde = generate_covariates(n, cfg.sigma_x, sigma_xi, rng)
        Y = generate_sar_outcome(weights, X, true, rng)
        if cfg.design == "replicates":
            # replicate j of unit i carries its own error draw; the proxy is
            # the replicate mean, whose error covariance is sigma_xi / k
            k = cfg.replicate_k
            chol_xi = _chol(sigma_xi, "sigma_xi")
            reps_arr = X[:, None, :d1] + rng.standard_normal((n, k, d1)) @ chol_xi.T
            u_tilde, delta_hat, C_hat = mecov.estimate_from_replicates(
                mecov.ReplicateSet(reps_arr))
            design_obs = ObservedDesign(np.column_stack([u_tilde, X[:, d1:]]), d1=d1, d2=d2)
            me_known = None
            me_estimated = shared_omega(delta_hat, d2=d2, n=n, C_delta=C_hat)
        else:
            design_obs = ObservedDesign(X_tilde, d1=d1, d2=d2)
            me_known = assemble_omega([sigma_xi] * n, d2=d2)
            me_estimated = None

    fits = _fit_all(cfg, Y, weights, design_obs, me_known, me_estimated)
    out = {}
    for name, res in fits.items():
        if isinstance(res, Exception):
            out[name] = {"ok": False, "error": getattr(res, "code", type(res).__name__)}
        else:
            out[name] = {"ok": True,
                         "estimate": res.params.as_vector(),
                         "se": res.std_errors}
    return out


def _cov_block_probs(net: dict) -> np.ndarray:
    if "block_probs" in net:
        return np.asarray(net["block_probs"], dtype=float)
    k = int(net["k"])
    within, between = float(net["within"]), float(net["between"])
    return np.full((k, k), between) + (within - between) * np.eye(k)


# ---------------------------------------------------------------------------
# harness


@dataclass
class ExperimentSummary:
    config: dict
    rows: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)
    raw_estimates: list = field(default_factory=list)

    def metric(self, estimator: str, n: int, parameter: str, metric: str,
               tau: float | None = None):
        for row in self.rows:
            if (row["estimator"] == estimator and row["n"] == n
                    and row["parameter"] == parameter and row.get("tau") == tau):
                return row[metric]
        raise KeyError((estimator, n, parameter, metric, tau))

    def to_json(self, path=None):
        payload = {"schema": SCHEMA_VERSION, "config": self.config,
                   "rows": self.rows,
                   "failures": {f"{k[0]}|n={k[1]}|tau={k[2]}": v
                                for k, v in self.failures.items()}}
        text = json.dumps(payload, indent=2, default=_json_default)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_csv(self, path):
        metrics = ("mean_bias", "mc_se_of_bias", "empirical_sd",
                   "mean_estimated_se", "coverage_95", "n_ok", "n_fail")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["estimator", "n", "tau", "parameter", "metric", "value"])
            for row in self.rows:
                for m in metrics:
                    writer.writerow([row["estimator"], row["n"],
                                     "" if row.get("tau") is None else row["tau"],
                                     row["parameter"], m, repr(row[m])])

    def dump_raw_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["estimator", "n", "tau", "rep", "parameter", "estimate", "se"])
            for rec in self.raw_estimates:
                writer.writerow(rec)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _worker(args):
    cfg, n, tau_index, rep = args
    return (n, tau_index, rep), run_replication(cfg, n, tau_index, rep)


def run_experiment(cfg: ExperimentConfig, *, n_workers: int = 1,
                   keep_raw: bool = False) -> ExperimentSummary:
    """Run the full replication grid and aggregate bias/SD/SE tables.

    Failed fits are counted and excluded, never silently dropped.  The
    summary is identical for any worker count.
    """
    tau_indices = list(range(len(cfg.tau_grid))) if cfg.tau_grid else [-1]
    tasks = [(cfg, n, ti, rep)
             for n in cfg.n_grid for ti in tau_indices for rep in range(cfg.n_reps)]
    results = {}
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            for key, value in pool.map(_worker, tasks, chunksize=1):
                results[key] = value
    else:
        for task in tasks:
            key, value = _worker(task)
            results[key] = value

    summary = ExperimentSummary(config=_config_echo(cfg))
    names = cfg.parameter_names
    truth = cfg.true_params.as_vector()
    for n in cfg.n_grid:
        for ti in tau_indices:
            tau = None if ti < 0 else cfg.tau_grid[ti]
            for est_name in cfg.estimators:
                recs = [results[(n, ti, rep)][est_name] for rep in range(cfg.n_reps)]
                ok = [r for r in recs if r["ok"]]
                n_fail = len(recs) - len(ok)
                if n_fail:
                    codes = {}
                    for r in recs:
                        if not r["ok"]:
                            codes[r["error"]] = codes.get(r["error"], 0) + 1
                    summary.failures[(est_name, n, tau)] = codes
                if not ok:
                    continue
                estm = np.array([r["estimate"] for r in ok])
                ses = np.array([r["se"] for r in ok])
                if keep_raw:
                    for rep, r in enumerate(recs):
                        if r["ok"]:
                            for j, pname in enumerate(names):
                                summary.raw_estimates.append(
                                    (est_name, n, tau, rep, pname,
                                     repr(float(r["estimate"][j])),
                                     repr(float(r["se"][j]))))
                for j, pname in enumerate(names):
                    vals = estm[:, j]
                    finite = np.isfinite(vals)
                    vals = vals[finite]
                    if vals.size == 0:
                        continue
                    bias = vals - truth[j]
                    sd = float(vals.std(ddof=1)) if vals.size > 1 else float("nan")
                    se_vals = ses[finite, j]
                    se_ok = np.isfinite(se_vals)
                    covered = float("nan")
                    if se_ok.any() and np.isfinite(truth[j]):
                        z = np.abs(bias[se_ok]) <= 1.959963984540054 * se_vals[se_ok]
                        covered = float(z.mean())
                    summary.rows.append({
                        "estimator": est_name, "n": n, "tau": tau, "parameter": pname,
                        "mean_bias": float(bias.mean()),
                        "mc_se_of_bias": (sd / np.sqrt(vals.size)) if vals.size > 1 else float("nan"),
                        "empirical_sd": sd,
                        "mean_estimated_se": float(se_vals[se_ok].mean()) if se_ok.any() else float("nan"),
                        "coverage_95": covered,
                        "n_ok": int(vals.size), "n_fail": int(n_fail),
                    })
    return summary


def _config_echo(cfg: ExperimentConfig) -> dict:
    return {
        "seed": cfg.seed, "n_grid": list(cfg.n_grid), "n_reps": cfg.n_reps,
        "design": cfg.design,
        "true_params": {"beta": cfg.beta.tolist(), "gamma": cfg.gamma.tolist(),
                        "rho": cfg.rho, "sigma2": cfg.sigma2},
        "estimators": list(cfg.estimators),
        "tau_grid": list(cfg.tau_grid) if cfg.tau_grid else None,
        "network": {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                    for k, v in cfg.network.items()},
    }
