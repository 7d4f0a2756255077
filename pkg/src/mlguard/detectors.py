"""Distribution-shift detectors: training, calibration, evaluation, feedback.

Three detector families back `Distribution_Matches` conditions:

* likelihood_ratios_for_ood: diagonal Gaussian density of the training data
  (foreground) against a density fit on background-perturbed data; the score
  is the log-likelihood ratio, low scores indicate out-of-distribution.
* mahalanobis_distance: distance to the training mean under a
  shrinkage-regularized covariance; high scores indicate OOD.
* kolmogorov_smirnov: per-feature two-sample KS test of the batch against a
  reference sample, Bonferroni-corrected across features.

Per-sample methods carry a calibration table of held-out in-distribution
scores. A batch's violation probability comes from the mean rank position of
its row scores within that table, normalized by the exact two-sample
rank-sum null variance and mapped through the normal CDF toward the OOD
orientation. Evaluating the calibration split itself gives exactly 0.5, and
a fresh in-distribution batch violates at confidence c with probability
close to 1 - c.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    DegenerateFeatureWarning,
    DimensionMismatch,
    EmptyBatch,
    MalformedModelDocument,
    SingularCovariance,
    TooFewRows,
    TooFewSamples,
    UnknownDetectorMethod,
    UnknownDetectorType,
)
from .schema import RecordBatch, numeric_matrix

METHOD_LLR = "likelihood_ratios_for_ood"
METHOD_MAHALANOBIS = "mahalanobis_distance"
METHOD_KS = "kolmogorov_smirnov"
METHODS = (METHOD_LLR, METHOD_KS, METHOD_MAHALANOBIS)
DEFAULT_METHOD = METHOD_LLR

LOW_IS_OOD = "low_is_ood"
HIGH_IS_OOD = "high_is_ood"

VARIANCE_FLOOR = 1e-9
SHRINKAGE = 0.05
MIN_TRAIN_ROWS = 80
MIN_CALIBRATION = 20
_KS_TERM_EPS = 1e-10
_CEIL_EPS = 1e-9


@dataclass(frozen=True)
class TrainMeta:
    n_train: int
    seed: int


@dataclass(frozen=True)
class GaussianDensity:
    """Diagonal Gaussian: per-feature mean and strictly positive variance."""

    mean: tuple[float, ...]
    variance: tuple[float, ...]

    def __post_init__(self):
        if len(self.mean) != len(self.variance):
            raise ValueError("mean and variance lengths differ")
        if any(v <= 0 for v in self.variance):
            raise ValueError("variances must be strictly positive")


@dataclass(frozen=True)
class CalibrationTable:
    """Sorted held-out in-distribution scores; at least 20 entries."""

    scores: tuple[float, ...]

    def __post_init__(self):
        if len(self.scores) < MIN_CALIBRATION:
            raise ValueError(f"calibration needs >= {MIN_CALIBRATION} scores, got {len(self.scores)}")
        if any(a > b for a, b in zip(self.scores, self.scores[1:])):
            raise ValueError("calibration scores must be sorted ascending")

    @property
    def n(self) -> int:
        return len(self.scores)


@dataclass(frozen=True)
class LikelihoodRatio:
    features: tuple[str, ...]
    fg: GaussianDensity
    bg: GaussianDensity
    calibration: CalibrationTable
    threshold_score: float
    confidence: float
    meta: TrainMeta

    method = METHOD_LLR
    orientation = LOW_IS_OOD


@dataclass(frozen=True)
class Mahalanobis:
    features: tuple[str, ...]
    mean: tuple[float, ...]
    covariance: tuple[tuple[float, ...], ...]
    shrinkage: float
    calibration: CalibrationTable
    threshold_score: float
    confidence: float
    meta: TrainMeta

    method = METHOD_MAHALANOBIS
    orientation = HIGH_IS_OOD


@dataclass(frozen=True)
class KsBatch:
    features: tuple[str, ...]
    reference: tuple[tuple[float, ...], ...]
    alpha: float
    meta: TrainMeta

    method = METHOD_KS


DetectorModel = LikelihoodRatio | Mahalanobis | KsBatch


@dataclass(frozen=True)
class TrainConfig:
    heldout_fraction: float = 0.25
    seed: int = 0
    confidence: float = 0.95
    background_rate: float = 0.2


@dataclass(frozen=True)
class Verdict:
    violated: bool
    p_violation: float
    score: float
    method: str
    per_feature_detail: tuple | None = None


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float


# -- densities and scores -------------------------------------------------


def _logpdf_rows(g: GaussianDensity, X: np.ndarray) -> np.ndarray:
    mean = np.asarray(g.mean, dtype=np.float64)
    var = np.asarray(g.variance, dtype=np.float64)
    return -0.5 * np.sum(np.log(2.0 * np.pi * var) + (X - mean) ** 2 / var, axis=1)


def density_logpdf(g: GaussianDensity, x) -> float:
    """Log density of a diagonal Gaussian at a single point."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (len(g.mean),):
        raise DimensionMismatch(f"expected {len(g.mean)}-vector, got shape {x.shape}")
    return float(_logpdf_rows(g, x[None, :])[0])


def _llr_rows(fg: GaussianDensity, bg: GaussianDensity, X: np.ndarray) -> np.ndarray:
    return _logpdf_rows(fg, X) - _logpdf_rows(bg, X)


def score_llr(model: LikelihoodRatio, x) -> float:
    """Log-likelihood ratio foreground vs background; lower means more OOD."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (len(model.features),):
        raise DimensionMismatch(f"expected {len(model.features)}-vector, got shape {x.shape}")
    return float(_llr_rows(model.fg, model.bg, x[None, :])[0])


def _mahalanobis_rows(mean, cov, X: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov, dtype=np.float64)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as e:
        raise SingularCovariance(f"covariance is not positive definite: {e}") from e
    diff = X - np.asarray(mean, dtype=np.float64)
    y = np.linalg.solve(L, diff.T)
    return np.sqrt(np.sum(y * y, axis=0))


def score_mahalanobis(model: Mahalanobis, x) -> float:
    """Mahalanobis distance to the training mean; higher means more OOD."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (len(model.features),):
        raise DimensionMismatch(f"expected {len(model.features)}-vector, got shape {x.shape}")
    return float(_mahalanobis_rows(model.mean, model.covariance, x[None, :])[0])


def _row_scores(model, X: np.ndarray) -> np.ndarray:
    if isinstance(model, LikelihoodRatio):
        return _llr_rows(model.fg, model.bg, X)
    return _mahalanobis_rows(model.mean, model.covariance, X)


# -- background perturbation ----------------------------------------------


def _perturb(X: np.ndarray, rate: float, rng) -> np.ndarray:
    # Noise scale uses the raw per-feature std: a constant feature stays
    # constant under perturbation. Draw order (mask, then noise) is part of
    # the determinism contract.
    std = X.std(axis=0)
    mask = rng.random(X.shape) < rate
    noise = rng.standard_normal(X.shape) * (2.0 * std)
    return np.where(mask, X + noise, X)


def perturb_background(train, rate: float, seed: int) -> np.ndarray:
    """Replace each cell, independently with probability `rate`, by the cell
    plus Gaussian noise whose std is twice that feature's std."""
    X = np.asarray(train, dtype=np.float64)
    return _perturb(X, rate, np.random.default_rng(seed))


# -- Kolmogorov-Smirnov ----------------------------------------------------


def _kolmogorov_p(x: float) -> float:
    """Asymptotic Kolmogorov survival function 2*sum((-1)^(k-1) exp(-2 k^2 x^2))."""
    if x < 1e-8:
        return 1.0
    total = 0.0
    sign = 1.0
    for k in range(1, 1_000_000):
        term = math.exp(-2.0 * k * k * x * x)
        if term < _KS_TERM_EPS:
            break
        total += sign * term
        sign = -sign
    return min(1.0, max(0.0, 2.0 * total))


def ks_two_sample(a, b) -> KsResult:
    """Two-sample KS: D = sup |F_a - F_b|, p from the asymptotic Kolmogorov
    distribution at effective sample size |a||b|/(|a|+|b|)."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size < 5 or b.size < 5:
        raise TooFewSamples(f"need >= 5 points per sample, got {a.size} and {b.size}")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    d = float(np.max(np.abs(fa - fb)))
    ne = a.size * b.size / (a.size + b.size)
    return KsResult(statistic=d, p_value=_kolmogorov_p(math.sqrt(ne) * d))


# -- calibration ------------------------------------------------------------


def calibrate_threshold(calibration: CalibrationTable, confidence_threshold: float,
                        orientation: str) -> float:
    """Order-statistic threshold: with alpha = 1 - confidence, the k-th
    smallest held-out score (k = ceil(alpha*n)) for low_is_ood, k-th largest
    for high_is_ood. A fresh in-distribution sample then lands beyond the
    threshold with probability close to alpha.
    """
    if not 0.0 < confidence_threshold < 1.0:
        raise ValueError("confidence_threshold must lie in (0, 1)")
    if orientation not in (LOW_IS_OOD, HIGH_IS_OOD):
        raise ValueError(f"unknown orientation {orientation!r}")
    n = calibration.n
    alpha = 1.0 - confidence_threshold
    # The epsilon guards against float products like 0.05*100 landing a hair
    # above the integer they represent exactly in decimal.
    k = max(1, math.ceil(alpha * n - _CEIL_EPS))
    if orientation == LOW_IS_OOD:
        return calibration.scores[k - 1]
    return calibration.scores[n - k]


def batch_p_violation(calibration: CalibrationTable, orientation: str, row_scores) -> float:
    """Violation probability of a batch of row scores against the table.

    Each row's position in the table is its midpoint-tie ECDF rank
    (#smaller + 0.5*#equal)/n. The batch statistic is the mean position u,
    whose null variance against an exchangeable table is exactly
    (n+m+1)/(12nm); the one-sided normal tail toward the OOD orientation is
    the violation probability. Self-evaluating the table gives exactly 0.5.
    """
    table = np.asarray(calibration.scores, dtype=np.float64)
    scores = np.asarray(row_scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise EmptyBatch("cannot compute a violation probability for zero rows")
    n = table.size
    m = scores.size
    lo = np.searchsorted(table, scores, side="left")
    hi = np.searchsorted(table, scores, side="right")
    u = float(np.mean((lo + 0.5 * (hi - lo)) / n))
    var = (n + m + 1) / (12.0 * n * m)
    if var <= 0:
        return 0.5
    z = ((0.5 - u) if orientation == LOW_IS_OOD else (u - 0.5)) / math.sqrt(var)
    p = 0.5 * math.erfc(-z / math.sqrt(2.0))
    return min(1.0, max(0.0, p))


# -- training ----------------------------------------------------------------


def _fit_density(X: np.ndarray) -> GaussianDensity:
    mean = X.mean(axis=0)
    var = np.maximum(X.var(axis=0), VARIANCE_FLOOR)
    return GaussianDensity(mean=tuple(mean.tolist()), variance=tuple(var.tolist()))


def _warn_degenerate(fit: np.ndarray, features) -> None:
    flat = [f for f, v in zip(features, fit.var(axis=0)) if v <= 0.0]
    if flat:
        warnings.warn(
            f"zero-variance features floored during training: {flat}",
            DegenerateFeatureWarning,
            stacklevel=3,
        )


def train_detector(spec, train: RecordBatch, config: TrainConfig | None = None) -> DetectorModel:
    """Split, fit, and calibrate a detector for a Validation_model spec.

    The split is deterministic given config.seed: a seeded permutation takes
    ceil(heldout_fraction * n) rows for calibration and fits on the rest.
    Identical (spec, data, config) yield a bit-identical serialized model.
    """
    config = config or TrainConfig()
    if spec.type not in ("out_of_distribution_detector",):
        raise UnknownDetectorType(f"unknown validation model type {spec.type!r}")
    method = spec.method or DEFAULT_METHOD
    if method not in METHODS:
        raise UnknownDetectorMethod(f"unknown validation model method {method!r}")
    if not 0.0 < config.heldout_fraction <= 0.5:
        raise ValueError("heldout_fraction must lie in (0, 0.5]")
    if not 0.0 < config.confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")

    X = numeric_matrix(train, train.columns)
    n = X.shape[0]
    if n < MIN_TRAIN_ROWS:
        raise TooFewRows(f"need at least {MIN_TRAIN_ROWS} training rows, got {n}")
    n_held = math.ceil(n * config.heldout_fraction)
    if n_held < MIN_CALIBRATION:
        raise TooFewRows(
            f"held-out split has {n_held} rows; calibration needs at least {MIN_CALIBRATION}"
        )

    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(n)
    held = X[perm[:n_held]]
    fit = X[perm[n_held:]]
    _warn_degenerate(fit, train.columns)

    features = tuple(train.columns)
    meta = TrainMeta(n_train=n, seed=config.seed)

    if method == METHOD_KS:
        reference = tuple(tuple(np.sort(fit[:, j]).tolist()) for j in range(fit.shape[1]))
        return KsBatch(features=features, reference=reference,
                       alpha=1.0 - config.confidence, meta=meta)

    if method == METHOD_LLR:
        fg = _fit_density(fit)
        bg = _fit_density(_perturb(fit, config.background_rate, rng))
        held_scores = _llr_rows(fg, bg, held)
        table = CalibrationTable(tuple(np.sort(held_scores).tolist()))
        threshold = calibrate_threshold(table, config.confidence, LOW_IS_OOD)
        return LikelihoodRatio(features=features, fg=fg, bg=bg, calibration=table,
                               threshold_score=threshold, confidence=config.confidence,
                               meta=meta)

    mean = fit.mean(axis=0)
    centered = fit - mean
    sample_cov = centered.T @ centered / fit.shape[0]
    d = fit.shape[1]
    cov = (1.0 - SHRINKAGE) * sample_cov + SHRINKAGE * (np.trace(sample_cov) / d) * np.eye(d)
    idx = np.diag_indices(d)
    cov[idx] = np.maximum(cov[idx], VARIANCE_FLOOR)
    held_scores = _mahalanobis_rows(mean, cov, held)
    table = CalibrationTable(tuple(np.sort(held_scores).tolist()))
    threshold = calibrate_threshold(table, config.confidence, HIGH_IS_OOD)
    return Mahalanobis(features=features, mean=tuple(mean.tolist()),
                       covariance=tuple(tuple(row) for row in cov.tolist()),
                       shrinkage=SHRINKAGE, calibration=table,
                       threshold_score=threshold, confidence=config.confidence,
                       meta=meta)


# -- evaluation ---------------------------------------------------------------


def _training_moments(model) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature training mean and std recovered from model parameters."""
    if isinstance(model, LikelihoodRatio):
        return (np.asarray(model.fg.mean), np.sqrt(np.asarray(model.fg.variance)))
    if isinstance(model, Mahalanobis):
        cov = np.asarray(model.covariance)
        d = cov.shape[0]
        lam = model.shrinkage
        if lam >= 1.0:
            var = np.diag(cov).copy()
        else:
            # The trace is invariant under the shrinkage map, so the sample
            # variance comes back exactly.
            var = (np.diag(cov) - lam * np.trace(cov) / d) / (1.0 - lam)
        return (np.asarray(model.mean), np.sqrt(np.maximum(var, VARIANCE_FLOOR)))
    ref = [np.asarray(col) for col in model.reference]
    return (np.array([c.mean() for c in ref]), np.array([c.std() for c in ref]))


def training_stds(model) -> dict[str, float]:
    """Map feature name to its training-split standard deviation."""
    _, stds = _training_moments(model)
    return {f: float(s) for f, s in zip(model.features, stds)}


def evaluate(model: DetectorModel, batch: RecordBatch, confidence_threshold: float) -> Verdict:
    """Evaluate one batch. violated is exactly (p_violation >= threshold)."""
    if not 0.0 < confidence_threshold < 1.0:
        raise ValueError("confidence_threshold must lie in (0, 1)")
    X = numeric_matrix(batch, model.features)
    if X.shape[0] == 0:
        raise EmptyBatch("cannot evaluate an empty batch")

    if isinstance(model, KsBatch):
        details = []
        min_p = 1.0
        max_stat = 0.0
        for j, feature in enumerate(model.features):
            res = ks_two_sample(model.reference[j], np.sort(X[:, j]))
            details.append({"feature": feature, "statistic": res.statistic,
                            "p_value": res.p_value})
            min_p = min(min_p, res.p_value)
            max_stat = max(max_stat, res.statistic)
        p = 1.0 - min(1.0, len(model.features) * min_p)
        return Verdict(violated=p >= confidence_threshold, p_violation=p,
                       score=max_stat, method=model.method,
                       per_feature_detail=tuple(details))

    row_scores = _row_scores(model, X)
    p = batch_p_violation(model.calibration, model.orientation, row_scores)
    mean, std = _training_moments(model)
    batch_mean = X.mean(axis=0)
    details = tuple(
        {"feature": f, "shift_sigmas": float((bm - tm) / ts)}
        for f, bm, tm, ts in zip(model.features, batch_mean, mean, std)
    )
    return Verdict(violated=p >= confidence_threshold, p_violation=p,
                   score=float(np.median(row_scores)), method=model.method,
                   per_feature_detail=details)


# -- feedback -----------------------------------------------------------------


def recalibrate_with_feedback(model: DetectorModel, feedback) -> DetectorModel:
    """Fold operator feedback into the calibration table.

    Each item is (payload, label). A false_alarm payload contributes one
    batch score (the median of its row scores) to the table, and the
    threshold is recomputed at the model's stored confidence. true_violation
    items carry no in-distribution information and are ignored. Payloads may
    be RecordBatch values (scored by the model) or precomputed row scores.
    """
    feedback = list(feedback)
    if not feedback:
        raise ValueError("feedback must contain at least one item")
    for _, label in feedback:
        if label not in ("false_alarm", "true_violation"):
            raise ValueError(f"unknown feedback label {label!r}")
    if isinstance(model, KsBatch):
        return model

    added = []
    for payload, label in feedback:
        if label != "false_alarm":
            continue
        if isinstance(payload, RecordBatch):
            scores = _row_scores(model, numeric_matrix(payload, model.features))
        else:
            scores = np.asarray(list(payload), dtype=np.float64)
        if scores.size == 0:
            continue
        added.append(float(np.median(scores)))
    if not added:
        return model

    table = CalibrationTable(tuple(sorted(list(model.calibration.scores) + added)))
    threshold = calibrate_threshold(table, model.confidence, model.orientation)
    return replace(model, calibration=table, threshold_score=threshold)


# -- serialization ------------------------------------------------------------


def serialize_detector(model: DetectorModel) -> str:
    """Render a model as JSON with full round-trip float precision."""
    doc: dict = {
        "method": model.method,
        "features": list(model.features),
        "meta": {"n_train": model.meta.n_train, "seed": model.meta.seed},
    }
    if isinstance(model, KsBatch):
        doc["params"] = {"reference": [list(col) for col in model.reference],
                         "alpha": model.alpha}
        doc["calibration"] = None
        doc["threshold_score"] = None
    elif isinstance(model, LikelihoodRatio):
        doc["params"] = {
            "fg": {"mean": list(model.fg.mean), "variance": list(model.fg.variance)},
            "bg": {"mean": list(model.bg.mean), "variance": list(model.bg.variance)},
            "confidence": model.confidence,
        }
        doc["calibration"] = {"scores": list(model.calibration.scores),
                              "orientation": model.orientation}
        doc["threshold_score"] = model.threshold_score
    else:
        doc["params"] = {
            "mean": list(model.mean),
            "covariance": [list(row) for row in model.covariance],
            "shrinkage": model.shrinkage,
            "confidence": model.confidence,
        }
        doc["calibration"] = {"scores": list(model.calibration.scores),
                              "orientation": model.orientation}
        doc["threshold_score"] = model.threshold_score
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _need(doc: dict, key: str):
    if key not in doc:
        raise MalformedModelDocument(f"missing key {key!r}")
    return doc[key]


def _float_list(value, label: str) -> tuple[float, ...]:
    if not isinstance(value, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        raise MalformedModelDocument(f"{label} must be a list of numbers")
    return tuple(float(v) for v in value)


def _density_from(doc, label: str) -> GaussianDensity:
    if not isinstance(doc, dict):
        raise MalformedModelDocument(f"{label} must be an object")
    mean = _float_list(_need(doc, "mean"), f"{label}.mean")
    var = _float_list(_need(doc, "variance"), f"{label}.variance")
    if len(mean) != len(var):
        raise MalformedModelDocument(f"{label}: mean and variance lengths differ")
    if any(v <= 0 for v in var):
        raise MalformedModelDocument(f"{label}: variances must be strictly positive")
    return GaussianDensity(mean=mean, variance=var)


def _calibration_from(doc, expected_orientation: str) -> CalibrationTable:
    if not isinstance(doc, dict):
        raise MalformedModelDocument("calibration must be an object")
    scores = _float_list(_need(doc, "scores"), "calibration.scores")
    orientation = _need(doc, "orientation")
    if orientation != expected_orientation:
        raise MalformedModelDocument(
            f"calibration orientation {orientation!r} does not match the method"
        )
    if any(a > b for a, b in zip(scores, scores[1:])):
        raise MalformedModelDocument("calibration scores must be sorted ascending")
    if len(scores) < MIN_CALIBRATION:
        raise MalformedModelDocument(
            f"calibration needs at least {MIN_CALIBRATION} scores, got {len(scores)}"
        )
    return CalibrationTable(scores=scores)


def _confidence_from(params) -> float:
    c = _need(params, "confidence")
    if not isinstance(c, (int, float)) or isinstance(c, bool) or not 0.0 < c < 1.0:
        raise MalformedModelDocument("confidence must be a number in (0, 1)")
    return float(c)


def _check_threshold(doc, table: CalibrationTable, confidence: float, orientation: str) -> float:
    threshold = _need(doc, "threshold_score")
    if not isinstance(threshold, (int, float)) or isinstance(threshold, bool):
        raise MalformedModelDocument("threshold_score must be a number")
    expected = calibrate_threshold(table, confidence, orientation)
    if float(threshold) != float(expected):
        raise MalformedModelDocument(
            "threshold_score is not recomputable from the calibration table"
        )
    return float(threshold)


def deserialize_detector(text: str) -> DetectorModel:
    """Parse and validate a serialized model. Raises MalformedModelDocument."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedModelDocument(f"invalid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise MalformedModelDocument("model document must be a JSON object")

    method = _need(doc, "method")
    if method not in METHODS:
        raise MalformedModelDocument(f"unknown method {method!r}")
    features_raw = _need(doc, "features")
    if (not isinstance(features_raw, list) or not features_raw
            or not all(isinstance(f, str) and f for f in features_raw)):
        raise MalformedModelDocument("features must be a non-empty list of strings")
    features = tuple(features_raw)
    meta_raw = _need(doc, "meta")
    if (not isinstance(meta_raw, dict)
            or not isinstance(meta_raw.get("n_train"), int)
            or not isinstance(meta_raw.get("seed"), int)):
        raise MalformedModelDocument("meta must carry integer n_train and seed")
    meta = TrainMeta(n_train=meta_raw["n_train"], seed=meta_raw["seed"])
    params = _need(doc, "params")
    if not isinstance(params, dict):
        raise MalformedModelDocument("params must be an object")

    if method == METHOD_KS:
        if doc.get("calibration") is not None or doc.get("threshold_score") is not None:
            raise MalformedModelDocument(
                "kolmogorov_smirnov models carry no calibration table or threshold"
            )
        raw_ref = _need(params, "reference")
        if not isinstance(raw_ref, list) or len(raw_ref) != len(features):
            raise MalformedModelDocument("reference must hold one sample per feature")
        reference = []
        for j, col in enumerate(raw_ref):
            sample = _float_list(col, f"reference[{j}]")
            if len(sample) < 5:
                raise MalformedModelDocument(f"reference[{j}] needs at least 5 points")
            if any(a > b for a, b in zip(sample, sample[1:])):
                raise MalformedModelDocument(f"reference[{j}] must be sorted ascending")
            reference.append(sample)
        alpha = _need(params, "alpha")
        if not isinstance(alpha, (int, float)) or isinstance(alpha, bool) or not 0.0 < alpha < 1.0:
            raise MalformedModelDocument("alpha must be a number in (0, 1)")
        return KsBatch(features=features, reference=tuple(reference),
                       alpha=float(alpha), meta=meta)

    if method == METHOD_LLR:
        fg = _density_from(_need(params, "fg"), "fg")
        bg = _density_from(_need(params, "bg"), "bg")
        if len(fg.mean) != len(features) or len(bg.mean) != len(features):
            raise MalformedModelDocument("density dimensions disagree with features")
        confidence = _confidence_from(params)
        table = _calibration_from(_need(doc, "calibration"), LOW_IS_OOD)
        threshold = _check_threshold(doc, table, confidence, LOW_IS_OOD)
        return LikelihoodRatio(features=features, fg=fg, bg=bg, calibration=table,
                               threshold_score=threshold, confidence=confidence, meta=meta)

    mean = _float_list(_need(params, "mean"), "mean")
    raw_cov = _need(params, "covariance")
    if not isinstance(raw_cov, list) or len(raw_cov) != len(features):
        raise MalformedModelDocument("covariance must be a square matrix over the features")
    cov = []
    for i, row in enumerate(raw_cov):
        vals = _float_list(row, f"covariance[{i}]")
        if len(vals) != len(features):
            raise MalformedModelDocument("covariance must be square")
        cov.append(vals)
    if len(mean) != len(features):
        raise MalformedModelDocument("mean dimension disagrees with features")
    if any(cov[i][i] <= 0 for i in range(len(features))):
        raise MalformedModelDocument("covariance diagonal must be strictly positive")
    shrinkage = _need(params, "shrinkage")
    if (not isinstance(shrinkage, (int, float)) or isinstance(shrinkage, bool)
            or not 0.0 <= shrinkage <= 1.0):
        raise MalformedModelDocument("shrinkage must be a number in [0, 1]")
    confidence = _confidence_from(params)
    table = _calibration_from(_need(doc, "calibration"), HIGH_IS_OOD)
    threshold = _check_threshold(doc, table, confidence, HIGH_IS_OOD)
    return Mahalanobis(features=features, mean=mean,
                       covariance=tuple(cov), shrinkage=float(shrinkage),
                       calibration=table, threshold_score=threshold,
                       confidence=confidence, meta=meta)
