"""Simulation harness: data-generating mechanisms, Monte-Carlo truth,
replicate runner, summary tables and equivalent-label curves."""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import isotonic_regression
from scipy.special import expit

from . import accuracy as acc
from . import glm
from .data import BasisExpansion, StudyData, ValidationLabels
from .pipeline import SteamConfig, estimate

SHIFTS = ("weak", "moderate", "strong")
MISSPECS = ("both_correct", "pi_mis", "mu_mis")
MEASURES = ("cutoff", "auc", "tpr", "ppv", "npv")

# coefficients on X1, X2, X5, X6 and X1*X2 of the source-membership logit
_SHIFT_COEFS = {
    "weak": (0.1, 0.05, -0.1, -0.05, 0.05),
    "moderate": (0.2, 0.1, -0.2, -0.1, 0.1),
    "strong": (0.6, 0.3, -0.6, -0.3, 0.3),
}

MU_BASIS = BasisExpansion(((1, 2), (2, 3), (3, 4)))
PI_BASIS = BasisExpansion(((1, 2),))
RAW_BASIS = BasisExpansion()

DEFAULT_LABEL_GRID = (25, 50, 75, 100, 125, 150, 200, 250, 300, 400, 500, 700)


def true_mu(x) -> np.ndarray:
    """Outcome probability; ``x`` holds the raw covariates without intercept."""
    x1, x2, x3, x4 = x[:, 0], x[:, 1], x[:, 2], x[:, 3]
    return expit(-0.25 + 0.8 * x1 + 0.8 * x2 + 0.4 * x3 + 0.4 * x4
                 + 0.2 * x1 * x2 - 0.1 * x2 * x3 + 0.2 * x3 * x4)


def true_pi(x, shift: str) -> np.ndarray:
    """Probability of belonging to the source sample."""
    a1, a2, a5, a6, a12 = _SHIFT_COEFS[shift]
    x1, x2, x5, x6 = x[:, 0], x[:, 1], x[:, 4], x[:, 5]
    return expit(a1 * x1 + a2 * x2 + a5 * x5 + a6 * x6 + a12 * x1 * x2)


@dataclass(frozen=True)
class SimScenario:
    shift: str = "moderate"
    misspec: str = "both_correct"
    n: int = 200
    N: int = 10000
    n_target_labeled: int = 100
    p: int = 10
    sigma2: float = 1.0
    rho: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.shift not in SHIFTS:
            raise ValueError(f"shift must be one of {SHIFTS}")
        if self.misspec not in MISSPECS:
            raise ValueError(f"misspec must be one of {MISSPECS}")
        if not 0 <= self.rho < 1:
            raise ValueError("rho must lie in [0, 1)")
        if self.n > self.N:
            raise ValueError("n cannot exceed N")
        if self.p < 6:
            raise ValueError("the mechanisms use the first six covariates")

    @property
    def label(self) -> str:
        return f"{self.shift}/{self.misspec}/n={self.n}"


def draw_covariates(m: int, scenario: SimScenario, rng) -> np.ndarray:
    """MVN with variance sigma2 and common correlation rho (one shared factor)."""
    s2, rho = scenario.sigma2, scenario.rho
    common = rng.standard_normal((m, 1)) * math.sqrt(s2 * rho)
    return rng.standard_normal((m, scenario.p)) * math.sqrt(s2 * (1 - rho)) + common


@dataclass
class SimDataset:
    """A generated study. ``target_y`` holds every target outcome and exists
    only for truth and label-budget experiments."""

    data: StudyData
    validation: ValidationLabels
    target_y: np.ndarray
    scenario: SimScenario

    @staticmethod
    def mu(x):
        return true_mu(x)

    def pi(self, x):
        return true_pi(x, self.scenario.shift)


def _with_intercept(x):
    return np.column_stack([np.ones(x.shape[0]), x])


def generate_dataset(scenario: SimScenario, rng, max_attempts: int = 10) -> SimDataset:
    """Draw 2N pooled rows, split them by source membership and label n source rows."""
    for _ in range(max_attempts):
        x = draw_covariates(2 * scenario.N, scenario, rng)
        s = rng.random(x.shape[0]) < true_pi(x, scenario.shift)
        y = (rng.random(x.shape[0]) < true_mu(x)).astype(float)
        src, tgt = np.flatnonzero(s), np.flatnonzero(~s)
        if src.size > scenario.n and tgt.size >= max(1, scenario.n_target_labeled):
            break
    else:
        raise RuntimeError(f"fewer than {scenario.n} source rows in {max_attempts} attempts")
    lab = np.sort(rng.choice(src, scenario.n, replace=False))
    unl = np.setdiff1d(src, lab)
    data = StudyData(
        labeled_x=_with_intercept(x[lab]), y=y[lab],
        unlabeled_x=_with_intercept(x[unl]), target_x=_with_intercept(x[tgt]),
        feature_names=tuple(f"x{j + 1}" for j in range(scenario.p)),
    )
    vidx = np.sort(rng.choice(tgt.size, scenario.n_target_labeled, replace=False))
    return SimDataset(data, ValidationLabels(vidx, y[tgt][vidx]), y[tgt], scenario)


def scenario_bases(misspec: str) -> tuple[BasisExpansion, BasisExpansion]:
    """(outcome basis, selection basis) for a misspecification scenario."""
    return {
        "both_correct": (MU_BASIS, PI_BASIS),
        "pi_mis": (MU_BASIS, RAW_BASIS),
        "mu_mis": (RAW_BASIS, PI_BASIS),
    }[misspec]


def scenario_config(scenario: SimScenario, base: SteamConfig | None = None) -> SteamConfig:
    mu_b, pi_b = scenario_bases(scenario.misspec)
    return replace(base or SteamConfig(), mu_basis=mu_b, pi_basis=pi_b)


# ---------------------------------------------------------------------------
# Monte-Carlo truth


@dataclass(frozen=True)
class OracleSample:
    """Fresh covariate draws in the outcome basis, with target weights
    ``1 - pi(X)`` and true risks. Built once per scenario and reused to score
    any coefficient vector."""

    design: np.ndarray
    target_weight: np.ndarray
    mu: np.ndarray

    @property
    def draws(self) -> int:
        return self.mu.size


@dataclass(frozen=True)
class OracleTruth:
    values: dict
    beta_limit: np.ndarray
    draws: int

    def __getitem__(self, key):
        return self.values[key]


def build_oracle_sample(scenario: SimScenario, draws: int = 10**6, seed=None) -> OracleSample:
    rng = np.random.default_rng(scenario.seed + 7919 if seed is None else seed)
    mu_b, _ = scenario_bases(scenario.misspec)
    x = draw_covariates(draws, scenario, rng)
    return OracleSample(mu_b.apply(_with_intercept(x)), 1.0 - true_pi(x, scenario.shift),
                        true_mu(x))


def score_accuracy(scores, target_weight, mu, u0s=acc.DEFAULT_U0) -> dict:
    """Population accuracy of a score on the target, from weighted draws.

    The percentile of a draw is the target-weighted share of draws scoring at
    or below it; class masses are ``weight * mu`` and ``weight * (1 - mu)``.
    """
    order = np.argsort(scores, kind="stable")
    v = target_weight[order]
    m = mu[order]
    P = np.cumsum(v) / v.sum()
    pos, neg = v * m, v * (1.0 - m)
    tp = np.cumsum(pos[::-1])[::-1]
    tn = np.cumsum(neg[::-1])[::-1]
    cutoffs = np.concatenate([[0.0], P, [np.inf]])
    tpr = np.concatenate([[1.0], tp / tp[0], [0.0]])
    fpr = np.concatenate([[1.0], tn / tn[0], [0.0]])
    roc = acc.RocGrid(cutoffs, np.clip(tpr, 0, 1), np.clip(fpr, 0, 1))
    return acc._report(acc.Method.STEAM, roc, float(pos.sum() / v.sum()), u0s).scalars()


def limiting_outcome_coefficients(scenario: SimScenario, rng, draws: int = 10**6) -> np.ndarray:
    """Population limit of the working outcome model fitted on the source:
    a logistic fit to soft labels ``mu(X)`` with source-membership weights."""
    mu_b, _ = scenario_bases(scenario.misspec)
    x = draw_covariates(draws, scenario, rng)
    z = mu_b.apply(_with_intercept(x))
    return glm.fit_logistic(z, true_mu(x), true_pi(x, scenario.shift)).values


def oracle_truth(scenario: SimScenario, draws: int = 10**6, seed=None,
                 u0s=acc.DEFAULT_U0, sample: OracleSample | None = None) -> OracleTruth:
    """Target-population accuracy of the limiting outcome score."""
    seed = scenario.seed + 7919 if seed is None else seed
    beta = limiting_outcome_coefficients(scenario, np.random.default_rng(seed + 1), draws)
    sample = sample or build_oracle_sample(scenario, draws, seed)
    vals = score_accuracy(sample.design @ beta, sample.target_weight, sample.mu, u0s)
    return OracleTruth(vals, beta, sample.draws)


_ORACLE_CACHE: dict = {}


def _oracle_sample_cached(scenario: SimScenario, draws: int) -> OracleSample:
    key = (scenario, draws)
    if key not in _ORACLE_CACHE:
        _ORACLE_CACHE.clear()
        _ORACLE_CACHE[key] = build_oracle_sample(scenario, draws)
    return _ORACLE_CACHE[key]


# ---------------------------------------------------------------------------
# replicate runner


@dataclass(frozen=True)
class ExperimentSpec:
    """What each replicate computes beyond the point estimates."""

    config: SteamConfig = field(default_factory=SteamConfig)
    methods: tuple[str, ...] = ("source", "target_labeled", "weighted", "dr_aug", "steam")
    include_insample: bool = True
    label_grid: tuple[int, ...] = ()
    perturb: tuple[str, ...] = ()
    draws: int = 500
    level: float = 0.95


def _scalar_key(measure: str, u0: float) -> str:
    return measure if measure in ("auc", "prevalence") else f"{measure}@{u0:g}"


def _run_replicate(args):
    scenario, spec, seed_seq, oracle_draws = args
    from .inference import perturb, perturbation_matrix, summarize_draws

    rng = np.random.default_rng(seed_seq)
    ds = generate_dataset(scenario, rng)
    config = replace(scenario_config(scenario, spec.config), methods=spec.methods)
    out = {"estimates": {}, "failures": {}, "labels": {}, "perturb": {}, "truth": None,
           "sizes": (ds.data.n, ds.data.n_unlabeled, ds.data.n_target)}
    try:
        est = estimate(ds.data, config, ds.validation, strict=False)
    except Exception as exc:  # a failed model fit voids every method for this replicate
        out["failures"] = {m: f"{type(exc).__name__}: {exc}" for m in spec.methods}
        return out
    sample = _oracle_sample_cached(scenario, oracle_draws)
    out["truth"] = score_accuracy(sample.design @ est.fit.beta.values, sample.target_weight,
                                  sample.mu, config.u0s)
    out["failures"] = dict(est.failures)
    for name, rep in est.reports.items():
        out["estimates"][name] = rep.scalars()
    if spec.include_insample:
        try:
            rep = acc.steam_report(est.fit.scored.target_percentiles, est.fit.risk, config.u0s)
            out["estimates"]["steam_insample"] = rep.scalars()
        except ValueError as exc:
            out["failures"]["steam_insample"] = str(exc)
    if spec.label_grid:
        P_T = est.fit.scored.target_percentiles
        for m in spec.label_grid:
            idx = rng.choice(P_T.size, m, replace=False)
            try:
                rep = acc.comparator_target_labeled(P_T[idx], ds.target_y[idx], config.u0s)
                out["labels"][m] = rep.scalars()
            except ValueError:
                out["labels"][m] = None
    if spec.perturb:
        G = perturbation_matrix(ds.data.n, spec.draws, int(rng.integers(2**63)))
        kept = {}
        for variant in spec.perturb:
            try:
                d = perturb(est.fit, variant, spec.draws, G=G)
                kept[variant] = d
                plain = summarize_draws(d, spec.level)
                block = {
                    "elapsed": d.elapsed, "failed": len(d.failed),
                    "se": {k: v.se for k, v in plain.items()},
                    "ci_plain": {k: (v.lower, v.upper) for k, v in plain.items()},
                }
                if "steam" in out["estimates"]:
                    moved = summarize_draws(d, spec.level, center=out["estimates"]["steam"])
                    block["ci"] = {k: (v.lower, v.upper) for k, v in moved.items()}
                else:
                    block["ci"] = block["ci_plain"]
                out["perturb"][variant] = block
            except (RuntimeError, ValueError) as exc:
                out["perturb"][variant] = {"error": str(exc)}
        a, b = kept.get("exact"), kept.get("approx")
        if a is not None and b is not None and not a.failed and not b.failed:
            diff = np.median(np.abs(a.draws - b.draws), axis=0)
            out["paired_median_abs_diff"] = dict(zip(a.names, map(float, diff)))
    return out


TRUTHS = ("fitted", "limit")


@dataclass
class ExperimentResult:
    """Replicate records plus the truths to score them against.

    ``truth="fitted"`` (the default everywhere) compares each replicate with
    the target accuracy of the classifier fitted in that replicate;
    ``truth="limit"`` uses the limiting outcome coefficients.
    """

    scenario: SimScenario
    spec: ExperimentSpec
    limit: OracleTruth
    replicates: list
    elapsed: float

    def estimates(self, method: str, key: str) -> np.ndarray:
        """Per-replicate estimate (nan where the method failed)."""
        return np.array([r["estimates"].get(method, {}).get(key, np.nan)
                         for r in self.replicates])

    def truths(self, key: str, truth: str = "fitted") -> np.ndarray:
        if truth not in TRUTHS:
            raise ValueError(f"truth must be one of {TRUTHS}")
        if truth == "limit":
            return np.full(len(self.replicates), self.limit[key])
        return np.array([np.nan if r["truth"] is None else r["truth"][key]
                         for r in self.replicates])

    def methods(self) -> list[str]:
        return list(self.spec.methods) + (["steam_insample"] if self.spec.include_insample
                                          else [])

    def table(self, measures=MEASURES, u0: float | None = None,
              truth: str = "fitted") -> list[dict]:
        """Rows of bias, SE and RMSE (raw scale) per measure and method."""
        u0 = self.spec.config.u0s[0] if u0 is None else u0
        rows = []
        for measure in measures:
            key = _scalar_key(measure, u0)
            t = self.truths(key, truth)
            for method in self.methods():
                rows.append({"measure": measure, "method": method,
                             **error_summary(self.estimates(method, key), t)})
        return rows

    def label_rmse(self, key: str, truth: str = "fitted") -> tuple[np.ndarray, np.ndarray]:
        grid = np.array(self.spec.label_grid)
        t = self.truths(key, truth)
        rmse = []
        for m in grid:
            est = np.array([np.nan if r["labels"].get(m) is None else r["labels"][m][key]
                            for r in self.replicates])
            rmse.append(error_summary(est, t)["rmse"])
        return grid, np.array(rmse)

    def coverage(self, variant: str, keys=None, truth: str = "fitted",
                 interval: str = "ci") -> list[dict]:
        """Mean resampling SE, empirical SE and CI coverage of the STEAM estimate.

        ``interval="ci"`` scores the interval recentred on the reported
        (cross-validated) estimate, ``"ci_plain"`` the raw percentile interval.
        """
        keys = keys or [_scalar_key(m, self.spec.config.u0s[0]) for m in MEASURES]
        rows = []
        for key in keys:
            est = self.estimates("steam", key)
            tru = self.truths(key, truth)
            ses, hits, times = [], [], []
            for r, e, t in zip(self.replicates, est, tru):
                block = r["perturb"].get(variant)
                if not block or "error" in block or not (np.isfinite(e) and np.isfinite(t)):
                    continue
                ses.append(block["se"][key])
                lo, hi = block[interval][key]
                hits.append(lo <= t <= hi)
                times.append(block["elapsed"])
            ok = np.isfinite(est)
            rows.append({
                "measure": key, "variant": variant, "interval": interval,
                "estimate": float(np.nanmean(est)),
                "truth": float(np.nanmean(tru)),
                "empirical_se": float(np.std(est[ok], ddof=1)) if ok.sum() > 1 else np.nan,
                "mean_resampling_se": float(np.mean(ses)) if ses else np.nan,
                "coverage": float(np.mean(hits)) if hits else np.nan,
                "n_used": len(hits), "mean_seconds": float(np.mean(times)) if times else np.nan,
            })
        return rows


def error_summary(estimates, truth) -> dict:
    """Bias, SE (ddof 1) and RMSE of ``estimates - truth`` over replicates
    where both are finite, and the count of the rest."""
    est = np.asarray(estimates, dtype=float)
    t = np.broadcast_to(np.asarray(truth, dtype=float), est.shape)
    ok = np.isfinite(est) & np.isfinite(t)
    e = est[ok] - t[ok]
    r = e.size
    if r == 0:
        return {"bias": np.nan, "se": np.nan, "rmse": np.nan, "n_fail": int((~ok).sum())}
    return {
        "bias": float(e.mean()),
        "se": float(np.std(e, ddof=1)) if r > 1 else 0.0,
        "rmse": float(np.sqrt(np.mean(e * e))),
        "n_fail": int((~ok).sum()),
    }


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        env = os.environ.get("STEAM_EVAL_THREADS")
        workers = int(env) if env else 1
    return max(1, int(workers))


def run_experiment(scenario: SimScenario, spec: ExperimentSpec | None = None,
                   replicates: int = 200, oracle_draws: int = 10**6,
                   workers: int | None = None, progress=None) -> ExperimentResult:
    """Run seeded replicates (one child seed stream each) against the oracle."""
    if replicates < 2:
        raise ValueError("need at least two replicates")
    spec = spec or ExperimentSpec()
    start = time.perf_counter()
    sample = _oracle_sample_cached(scenario, oracle_draws)
    limit = oracle_truth(scenario, oracle_draws, u0s=spec.config.u0s, sample=sample)
    seeds = np.random.SeedSequence(scenario.seed).spawn(replicates)
    jobs = [(scenario, spec, s, oracle_draws) for s in seeds]
    workers = resolve_workers(workers)
    results = []
    if workers == 1:
        for i, job in enumerate(jobs):
            results.append(_run_replicate(job))
            if progress:
                progress(i + 1, replicates)
    else:
        # forked workers inherit the cached oracle sample
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, res in enumerate(pool.map(_run_replicate, jobs, chunksize=1)):
                results.append(res)
                if progress:
                    progress(i + 1, replicates)
    return ExperimentResult(scenario, spec, limit, results, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# equivalent labels


@dataclass(frozen=True)
class EquivalentLabels:
    size: float  # interpolated, before rounding
    clipped: str | None  # "below" / "above" when the target RMSE is out of range

    @property
    def labels(self) -> int:
        return int(round(self.size))


def equivalent_labels(estimator_rmse: float, label_grid, label_rmse) -> EquivalentLabels:
    """Label count at which the target-labeled RMSE curve reaches ``estimator_rmse``.

    The RMSE curve is made nonincreasing in the label count by isotonic
    regression, flat runs are collapsed to their mean size, and the inverse
    is read off by linear interpolation.
    """
    grid = np.asarray(label_grid, dtype=float)
    rmse = np.asarray(label_rmse, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("label grid must be ascending")
    ok = np.isfinite(rmse)
    grid, rmse = grid[ok], rmse[ok]
    fitted = isotonic_regression(rmse, increasing=False).x
    levels, inverse = np.unique(fitted, return_inverse=True)
    sizes = np.array([grid[inverse == k].mean() for k in range(levels.size)])
    # levels ascend, so sizes descend: RMSE falls as labels grow
    if estimator_rmse >= levels[-1]:
        return EquivalentLabels(float(sizes[-1]), "below" if estimator_rmse > levels[-1] else None)
    if estimator_rmse <= levels[0]:
        return EquivalentLabels(float(sizes[0]), "above" if estimator_rmse < levels[0] else None)
    return EquivalentLabels(float(np.interp(estimator_rmse, levels, sizes)), None)


def equivalent_label_table(result: ExperimentResult, measures=("auc",),
                           methods=("weighted", "dr_aug", "steam"),
                           truth: str = "fitted") -> list[dict]:
    rows = []
    u0 = result.spec.config.u0s[0]
    for measure in measures:
        key = _scalar_key(measure, u0)
        grid, curve = result.label_rmse(key, truth)
        for method in methods:
            rmse = error_summary(result.estimates(method, key), result.truths(key, truth))["rmse"]
            eq = equivalent_labels(rmse, grid, curve)
            rows.append({"measure": measure, "method": method, "rmse": rmse,
                         "equivalent_labels": eq.labels, "interpolated": eq.size,
                         "clipped": eq.clipped or ""})
    return rows


def scenario_dict(scenario: SimScenario) -> dict:
    return asdict(scenario)
