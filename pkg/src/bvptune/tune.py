"""Session facade: trained surrogates plus optimizer defaults behind a small function set."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import _case_id
from .optimize import Objective, ObjectiveSpec, ParetoFront, optimize_settings
from .plots import front_figure
from .settings import SETTING_NAMES, SolverSettings
from .surrogate import (
    MODEL_SCHEMA_VERSION,
    ClassifierModel,
    RegressorModel,
    load_model,
    predict_feasibility,
    predict_performance,
    save_model,
)

__all__ = [
    "TuneSession",
    "Performance",
    "FrontSchemaError",
    "InfeasibleSettingsWarning",
    "OBJECTIVE_PAIRS",
    "get_solvability_status",
    "get_solver_performance",
    "get_optimal_single",
    "get_optimal_ode_evaluations",
    "get_optimal_grid_points",
    "get_optimal_residuum",
    "get_optimal_pair",
    "get_optimal_evaluations_grid_points",
    "get_optimal_evaluations_residuum",
    "get_optimal_grid_points_residuum",
    "get_optimized_settings",
    "visualize",
]

OBJECTIVE_PAIRS = (
    (Objective.ODE_EVALUATIONS, Objective.GRID_POINTS),
    (Objective.ODE_EVALUATIONS, Objective.MAX_RESIDUUM),
    (Objective.GRID_POINTS, Objective.MAX_RESIDUUM),
)


class FrontSchemaError(ValueError):
    pass


class InfeasibleSettingsWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class TuneSession:
    classifier: ClassifierModel
    regressors: dict
    budget: int = 3200
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        missing = set(self.regressors) - set(self.classifier.cases)
        if missing:
            raise ValueError(f"classifier does not cover test case(s) {sorted(missing)}")

    def regressor(self, test_case) -> RegressorModel:
        case = _case_id(test_case)
        if case not in self.regressors:
            raise KeyError(f"no regressor for test case {case!r}")
        return self.regressors[case]

    def spec(self, test_case, objectives) -> ObjectiveSpec:
        return ObjectiveSpec(tuple(objectives), _case_id(test_case), budget=self.budget, seed=self.seed)

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_model(self.classifier, directory / "classifier.json")
        for case, model in sorted(self.regressors.items()):
            save_model(model, directory / f"regressor_{case}.json")
        manifest = {
            "schema_version": MODEL_SCHEMA_VERSION,
            "package": "bvptune",
            "classifier": "classifier.json",
            "regressors": {c: f"regressor_{c}.json" for c in sorted(self.regressors)},
            "optimizer": {"budget": self.budget, "seed": self.seed},
            "metadata": self.metadata,
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return directory

    @classmethod
    def load(cls, directory) -> "TuneSession":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
        if manifest.get("schema_version") != MODEL_SCHEMA_VERSION:
            raise ValueError(f"{directory}: unsupported session schema {manifest.get('schema_version')!r}")
        classifier = load_model(directory / manifest["classifier"])
        regressors = {c: load_model(directory / f) for c, f in manifest["regressors"].items()}
        opt = manifest.get("optimizer", {})
        return cls(classifier, regressors, int(opt.get("budget", 3200)), int(opt.get("seed", 0)), manifest.get("metadata", {}))


@dataclass(frozen=True)
class Performance:
    ode_evaluations: float
    grid_points: float
    max_residuum: float
    feasible: bool
    feasibility_probability: float


def _settings(settings) -> SolverSettings:
    if isinstance(settings, SolverSettings):
        return settings
    if isinstance(settings, dict):
        return SolverSettings(**settings)
    return SolverSettings(**dict(zip(SETTING_NAMES, settings, strict=True)))


def get_solvability_status(session: TuneSession, test_case, settings) -> bool:
    """Classifier decision for ``settings`` on ``test_case``."""
    return predict_feasibility(session.classifier, _case_id(test_case), _settings(settings))[1]


def get_solver_performance(session: TuneSession, test_case, settings) -> Performance:
    """Predicted statistics; infeasible settings still get a prediction and a warning."""
    s = _settings(settings)
    prob, feasible = predict_feasibility(session.classifier, _case_id(test_case), s)
    evals, grid, resid = predict_performance(session.regressor(test_case), s)
    if not feasible:
        warnings.warn(f"settings predicted unsolvable for {_case_id(test_case)} (p={prob:.3f})", InfeasibleSettingsWarning, stacklevel=2)
    return Performance(evals, grid, resid, feasible, prob)


def _optimize(session, test_case, objectives) -> ParetoFront:
    return optimize_settings(session.spec(test_case, objectives), session.classifier, session.regressor(test_case))


def get_optimal_single(session: TuneSession, test_case, objective):
    """``(settings, predicted value)`` minimizing one objective."""
    front = _optimize(session, test_case, [Objective.parse(objective)])
    best = front.points[0]
    return best.settings, best.predicted[0]


def get_optimal_ode_evaluations(session, test_case):
    return get_optimal_single(session, test_case, Objective.ODE_EVALUATIONS)


def get_optimal_grid_points(session, test_case):
    return get_optimal_single(session, test_case, Objective.GRID_POINTS)


def get_optimal_residuum(session, test_case):
    return get_optimal_single(session, test_case, Objective.MAX_RESIDUUM)


def get_optimal_pair(session: TuneSession, test_case, objective_pair):
    """Two-objective Pareto front as a data frame with the fixed column schema."""
    pair = tuple(Objective.parse(o) for o in objective_pair)
    if len(pair) != 2:
        raise ValueError("exactly two objectives are required")
    return _optimize(session, test_case, pair).to_frame()


def get_optimal_evaluations_grid_points(session, test_case):
    return get_optimal_pair(session, test_case, OBJECTIVE_PAIRS[0])


def get_optimal_evaluations_residuum(session, test_case):
    return get_optimal_pair(session, test_case, OBJECTIVE_PAIRS[1])


def get_optimal_grid_points_residuum(session, test_case):
    return get_optimal_pair(session, test_case, OBJECTIVE_PAIRS[2])


def get_optimized_settings(session: TuneSession, test_case):
    """Three-objective Pareto front as a data frame."""
    return _optimize(session, test_case, list(Objective)).to_frame()


def _front_columns(table):
    cols = list(table.columns)
    objectives = [c for c in cols if c.startswith("predicted_")]
    expected = list(SETTING_NAMES) + objectives + ["feasibility_probability"]
    if cols != expected or not 2 <= len(objectives) <= 3:
        raise FrontSchemaError(f"unexpected front columns {cols}")
    for c in objectives:
        try:
            Objective.parse(c[len("predicted_"):])
        except ValueError:
            raise FrontSchemaError(f"unknown objective column {c!r}") from None
    return objectives


def visualize(front, path, trials=None) -> Path:
    """Write an SVG Pareto plot of a front table (data frame, CSV path or :class:`ParetoFront`)."""
    import pandas as pd

    if isinstance(front, ParetoFront):
        if trials is None:
            feas = front.trial_feasible
            trials = front.trial_predicted[feas]
        front = front.to_frame()
    elif isinstance(front, (str, Path)):
        front = pd.read_csv(front)
    objectives = _front_columns(front)
    values = front[objectives].to_numpy(dtype=float)
    labels = [c[len("predicted_"):] for c in objectives]
    return front_figure(values, labels, path, None if trials is None else np.asarray(trials, dtype=float))
