"""Solvability classifier, per-problem performance regressors and their evaluation.

One classifier is trained across all test cases, with the test case one-hot
encoded next to the scaled settings. Regressors are trained per test case on
successful runs only and predict the three targets of
:data:`bvptune.dataset.TARGETS` with one model per target.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .dataset import TARGETS, FeatureTransform, InputScaler, LabeledDataset, _case_id, fit_transform
from .settings import SETTING_NAMES, SETTING_RANGES, SettingsRangeError, SolverSettings
from .trees import GradientBoosting, KNeighbors, RandomForest, estimator_from_dict

__all__ = [
    "MODEL_SCHEMA_VERSION",
    "ModelKind",
    "ClassifierModel",
    "RegressorModel",
    "ClassificationReport",
    "RegressionReport",
    "EvaluationReport",
    "train_classifier",
    "train_regressor",
    "train_regressors",
    "evaluate",
    "predict_feasibility",
    "predict_performance",
    "save_model",
    "load_model",
    "settings_matrix",
]

MODEL_SCHEMA_VERSION = 1
MIN_REGRESSION_ROWS = 100


class ModelKind(str, enum.Enum):
    KNN = "KNearestNeighbor"
    RF = "RandomForest"
    GBT = "GradientBoostedTrees"


# Regression forests split on all features: with only eight inputs, sqrt
# subsampling leaves too few candidate features per node.
CLASSIFIER_DEFAULTS = {
    ModelKind.KNN: {"k": 10},
    ModelKind.RF: {"n_trees": 100, "min_leaf": 5, "max_depth": None, "max_features": "sqrt"},
    ModelKind.GBT: {"n_trees": 300, "max_depth": 6, "learning_rate": 0.1, "min_leaf": 20, "l2": 1.0},
}
REGRESSOR_DEFAULTS = {
    ModelKind.KNN: {"k": 10},
    ModelKind.RF: {"n_trees": 100, "min_leaf": 5, "max_depth": None, "max_features": "all"},
    ModelKind.GBT: {"n_trees": 300, "max_depth": 6, "learning_rate": 0.1, "min_leaf": 20, "l2": 1.0},
}


def _make(kind: ModelKind, params: dict, classification: bool):
    if kind is ModelKind.KNN:
        return KNeighbors(**params)
    if kind is ModelKind.RF:
        return RandomForest(**params)
    loss = "logistic" if classification else "squared_error"
    return GradientBoosting(loss=loss, **params)


def settings_matrix(settings) -> np.ndarray:
    """Validated ``(n, 8)`` settings matrix from settings objects, vectors or a matrix."""
    if isinstance(settings, SolverSettings):
        return np.array([settings.as_vector()])
    if isinstance(settings, (list, tuple)) and settings and isinstance(settings[0], SolverSettings):
        return np.array([s.as_vector() for s in settings])
    X = np.atleast_2d(np.asarray(settings, dtype=float))
    if X.shape[1] != len(SETTING_NAMES):
        raise ValueError(f"expected {len(SETTING_NAMES)} settings per row, got {X.shape[1]}")
    lower = np.array([r.lower for r in SETTING_RANGES], dtype=float)
    upper = np.array([r.upper for r in SETTING_RANGES], dtype=float)
    bad = ~np.isfinite(X) | (X < lower) | (X > upper)
    if bad.any():
        i, k = np.argwhere(bad)[0]
        r = SETTING_RANGES[k]
        raise SettingsRangeError(f"{r.name}={X[i, k]!r} outside [{r.lower:g}, {r.upper:g}]")
    return X


@dataclass(frozen=True, eq=False)
class ClassifierModel:
    kind: ModelKind
    estimator: object
    scaler: InputScaler
    cases: tuple[str, ...]
    decision_threshold: float = 0.5
    hyperparams: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.decision_threshold < 1.0:
            raise ValueError("decision_threshold must lie in (0, 1)")

    def features(self, test_cases, settings) -> np.ndarray:
        X = settings_matrix(settings)
        if isinstance(test_cases, str) or not np.iterable(test_cases):
            test_cases = [test_cases] * X.shape[0]
        ids = np.array([_case_id(c) for c in test_cases])
        if ids.size != X.shape[0]:
            raise ValueError("one test case per settings row is required")
        unknown = set(ids.tolist()) - set(self.cases)
        if unknown:
            raise KeyError(f"classifier was not trained on test case(s) {sorted(unknown)}")
        onehot = (ids[:, None] == np.array(self.cases)[None, :]).astype(float)
        return np.hstack([self.scaler.transform(X), onehot])

    def predict_proba(self, test_cases, settings) -> np.ndarray:
        return np.clip(self.estimator.predict(self.features(test_cases, settings)), 0.0, 1.0)

    def predict(self, test_cases, settings) -> np.ndarray:
        return self.predict_proba(test_cases, settings) >= self.decision_threshold

    def with_threshold(self, threshold: float) -> "ClassifierModel":
        return ClassifierModel(self.kind, self.estimator, self.scaler, self.cases, threshold, self.hyperparams, self.seed)

    def to_dict(self) -> dict:
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "role": "classifier",
            "kind": self.kind.value,
            "hyperparameters": self.hyperparams,
            "seed": self.seed,
            "decision_threshold": self.decision_threshold,
            "cases": list(self.cases),
            "input_scaler": self.scaler.to_dict(),
            "estimator": self.estimator.to_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "ClassifierModel":
        return cls(
            ModelKind(d["kind"]),
            estimator_from_dict(d["estimator"]),
            InputScaler.from_dict(d["input_scaler"]),
            tuple(d["cases"]),
            float(d["decision_threshold"]),
            dict(d["hyperparameters"]),
            int(d["seed"]),
        )


@dataclass(frozen=True, eq=False)
class RegressorModel:
    kind: ModelKind
    test_case: str
    estimators: tuple
    transform: FeatureTransform
    hyperparams: dict = field(default_factory=dict)
    seed: int = 0

    def predict(self, settings) -> np.ndarray:
        """``(n, 3)`` predictions of :data:`TARGETS` in original units, clamped at 0."""
        X = self.transform.input_scaler.transform(settings_matrix(settings))
        z = np.column_stack([est.predict(X) for est in self.estimators])
        return np.maximum(self.transform.inverse_targets(z), 0.0)

    def to_dict(self) -> dict:
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "role": "regressor",
            "kind": self.kind.value,
            "test_case": self.test_case,
            "targets": list(TARGETS),
            "hyperparameters": self.hyperparams,
            "seed": self.seed,
            "transform": self.transform.to_dict(),
            "estimators": [e.to_dict() for e in self.estimators],
        }

    @classmethod
    def from_dict(cls, d) -> "RegressorModel":
        return cls(
            ModelKind(d["kind"]),
            d["test_case"],
            tuple(estimator_from_dict(e) for e in d["estimators"]),
            FeatureTransform.from_dict(d["transform"]),
            dict(d["hyperparameters"]),
            int(d["seed"]),
        )


def _resolve(kind, hyperparams, defaults):
    kind = ModelKind(kind)
    params = dict(defaults[kind])
    params.update(hyperparams or {})
    return kind, params


def train_classifier(train: LabeledDataset, kind=ModelKind.GBT, hyperparams=None, seed: int = 0, decision_threshold: float = 0.5) -> ClassifierModel:
    """Fit one solvability classifier over every test case present in ``train``."""
    if len(train) == 0:
        raise ValueError("training set is empty")
    if train.success.all() or not train.success.any():
        raise ValueError("training set contains a single class")
    kind, params = _resolve(kind, hyperparams, CLASSIFIER_DEFAULTS)
    scaler = InputScaler.fit(train.settings)
    cases = tuple(sorted(train.cases))
    shell = ClassifierModel(kind, None, scaler, cases, decision_threshold, params, seed)
    X = shell.features(train.test_cases, train.settings)
    est = _make(kind, params, classification=True).fit(X, train.success.astype(float), seed=seed)
    return ClassifierModel(kind, est, scaler, cases, decision_threshold, params, seed)


def train_regressor(train: LabeledDataset, test_case, kind=ModelKind.RF, hyperparams=None, seed: int = 0) -> RegressorModel:
    """Fit the performance regressor of ``test_case`` on its successful training rows."""
    case = _case_id(test_case)
    rows = train.for_case(case).successful()
    if len(rows) < MIN_REGRESSION_ROWS:
        raise ValueError(f"{case}: {len(rows)} successful rows, at least {MIN_REGRESSION_ROWS} needed")
    kind, params = _resolve(kind, hyperparams, REGRESSOR_DEFAULTS)
    transform = fit_transform(rows)
    X = transform.input_scaler.transform(rows.settings)
    Z = transform.transform_targets(rows.targets())
    estimators = tuple(
        _make(kind, params, classification=False).fit(X, Z[:, k], seed=seed + k) for k in range(len(TARGETS))
    )
    return RegressorModel(kind, case, estimators, transform, params, seed)


def train_regressors(train: LabeledDataset, test_cases=None, kind=ModelKind.RF, hyperparams=None, seed: int = 0) -> dict:
    cases = train.cases if test_cases is None else [_case_id(c) for c in test_cases]
    return {c: train_regressor(train, c, kind, hyperparams, seed) for c in cases}


def predict_feasibility(model: ClassifierModel, test_case, settings):
    """``(probability, decision)`` for one settings point."""
    p = float(model.predict_proba([test_case], settings_matrix(settings)[:1])[0])
    return p, bool(p >= model.decision_threshold)


def predict_performance(model: RegressorModel, settings):
    """Predicted ``(ode_evaluations, grid_points, max_residuum)``; a tuple for one point, an array for a batch."""
    single = isinstance(settings, SolverSettings) or np.ndim(settings) == 1
    out = model.predict(settings)
    return tuple(float(v) for v in out[0]) if single else out


# --- evaluation ------------------------------------------------------------------


@dataclass(frozen=True)
class ClassificationReport:
    accuracy: float
    precision: float
    recall: float
    roc_auc: float
    pr_auc: float
    roc_points: list
    pr_points: list
    threshold: float
    confusion: dict


@dataclass(frozen=True)
class RegressionReport:
    test_case: str
    target: str
    n: int
    rmse: float
    mape: float
    r2: float
    r2_defined: bool


@dataclass(frozen=True)
class EvaluationReport:
    classification: ClassificationReport | None
    regression: list[RegressionReport]

    def regression_for(self, test_case, target="ode_evaluations") -> RegressionReport:
        case = _case_id(test_case)
        for r in self.regression:
            if r.test_case == case and r.target == target:
                return r
        raise KeyError((case, target))

    def to_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v

        out = {"classification": None, "regression": []}
        if self.classification is not None:
            c = self.classification
            out["classification"] = {k: clean(getattr(c, k)) for k in c.__dataclass_fields__}
        out["regression"] = [{k: clean(getattr(r, k)) for k in r.__dataclass_fields__} for r in self.regression]
        return out

    def save(self, directory) -> None:
        """Write ``report.json`` plus ``roc_curve.csv`` and ``pr_curve.csv`` into ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "report.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        if self.classification is not None:
            for name, pts, header in (
                ("roc_curve.csv", self.classification.roc_points, "fpr,tpr"),
                ("pr_curve.csv", self.classification.pr_points, "recall,precision"),
            ):
                lines = [header] + [f"{a!r},{b!r}" for a, b in pts]
                (directory / name).write_text("\n".join(lines) + "\n", encoding="utf-8")


def classification_report(y_true, scores, threshold: float = 0.5) -> ClassificationReport:
    y_true = np.asarray(y_true, dtype=bool)
    scores = np.asarray(scores, dtype=float)
    conf = metrics.confusion(y_true, scores >= threshold)
    fpr, tpr, _ = metrics.roc_curve(y_true, scores)
    rec, prec, _ = metrics.pr_curve(y_true, scores)
    return ClassificationReport(
        accuracy=conf.accuracy,
        precision=conf.precision,
        recall=conf.recall,
        roc_auc=metrics.trapezoid(fpr, tpr),
        pr_auc=metrics.trapezoid(rec, prec),
        roc_points=[(float(a), float(b)) for a, b in zip(fpr, tpr)],
        pr_points=[(float(a), float(b)) for a, b in zip(rec, prec)],
        threshold=threshold,
        confusion={"tp": conf.tp, "fp": conf.fp, "tn": conf.tn, "fn": conf.fn},
    )


def regression_report(test_case, target, y_true, y_pred) -> RegressionReport:
    r2 = metrics.r2(y_true, y_pred)
    return RegressionReport(
        str(test_case), target, int(np.size(y_true)), metrics.rmse(y_true, y_pred), metrics.mape(y_true, y_pred), r2, not math.isnan(r2)
    )


def evaluate(classifier: ClassifierModel | None, regressors: dict | None, test: LabeledDataset) -> EvaluationReport:
    """Score the classifier on all test rows and each regressor on its successful test rows."""
    if len(test) == 0:
        raise ValueError("test set is empty")
    cls_report = None
    if classifier is not None:
        scores = classifier.predict_proba(test.test_cases, test.settings)
        cls_report = classification_report(test.success, scores, classifier.decision_threshold)
    reg_reports = []
    for case, model in (regressors or {}).items():
        rows = test.for_case(case).successful()
        if len(rows) == 0:
            continue
        pred = model.predict(rows.settings)
        actual = rows.targets()
        for k, target in enumerate(TARGETS):
            reg_reports.append(regression_report(_case_id(case), target, actual[:, k], pred[:, k]))
    return EvaluationReport(cls_report, reg_reports)


# --- persistence -------------------------------------------------------------------


def save_model(model, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(model.to_dict()), encoding="utf-8")
    return path


def load_model(path):
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if d.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported model schema version {d.get('schema_version')!r}")
    if d.get("role") == "classifier":
        return ClassifierModel.from_dict(d)
    if d.get("role") == "regressor":
        return RegressorModel.from_dict(d)
    raise ValueError(f"{path}: unknown model role {d.get('role')!r}")
