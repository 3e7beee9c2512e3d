"""Metrics, per-seed aggregation, and prediction dumps.

NLL is averaged per bag, not summed, so values are comparable across test-set
sizes.  The uniform reference density over the label range (4, 8) gives a
flat NLL of log 4, handy as a "no information" line on plots.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError
from .models import RegressionModel, predict_dataset
from .predictive import PredictiveDistribution

UNIFORM_REFERENCE_NLL = math.log(4.0)

PREDICTIONS_HEADER = ("id", "n", "y_true", "y_pred", "y_sd")


def _paired(preds, labels):
    p = np.asarray(preds, dtype=float)
    y = np.asarray(labels, dtype=float)
    if p.shape != y.shape or p.size < 1:
        raise InvalidArgumentError(
            f"predictions and labels must align and be nonempty, got {p.shape} vs {y.shape}"
        )
    return p, y


def mse(preds: Sequence[float], labels: Sequence[float]) -> float:
    p, y = _paired(preds, labels)
    return float(np.mean((p - y) ** 2))


def rmse(preds: Sequence[float], labels: Sequence[float]) -> float:
    return math.sqrt(mse(preds, labels))


def nll(predictives: Sequence[PredictiveDistribution], labels: Sequence[float]) -> float:
    """Mean negative log predictive density of the true labels."""
    y = np.asarray(labels, dtype=float)
    if len(predictives) != y.size or y.size < 1:
        raise InvalidArgumentError("predictives and labels must align and be nonempty")
    return -float(np.mean([p.logpdf(v) for p, v in zip(predictives, y)]))


def classification_error(
    predictives: Sequence[PredictiveDistribution], labels: Sequence[float]
) -> float:
    """Fraction of bags whose thresholded class probability misses the label."""
    y = np.asarray(labels, dtype=float)
    if len(predictives) != y.size or y.size < 1:
        raise InvalidArgumentError("predictives and labels must align and be nonempty")
    hard = np.array([1.0 if p.prob > 0.5 else 0.0 for p in predictives])
    return float(np.mean(hard != y))


@dataclass(frozen=True)
class MetricReport:
    model: str
    split: str
    mse: float
    rmse: float
    nll: Optional[float]
    n_bags: int
    seed: int

    def __post_init__(self):
        if not math.isclose(self.rmse, math.sqrt(self.mse), rel_tol=1e-12, abs_tol=1e-12):
            raise InvalidArgumentError("rmse must equal sqrt(mse)")
        if self.nll is not None and not math.isfinite(self.nll):
            raise InvalidArgumentError("nll must be finite when present")
        if self.n_bags < 1:
            raise InvalidArgumentError("report needs at least one bag")

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "split": self.split,
            "mse": self.mse,
            "rmse": self.rmse,
            "nll": self.nll,
            "n_bags": self.n_bags,
            "seed": self.seed,
        }


def metric_report(
    model: str,
    split: str,
    mse_value: float,
    nll_value: Optional[float],
    n_bags: int,
    seed: int,
) -> MetricReport:
    return MetricReport(
        model=model,
        split=split,
        mse=float(mse_value),
        rmse=math.sqrt(float(mse_value)),
        nll=None if nll_value is None else float(nll_value),
        n_bags=n_bags,
        seed=seed,
    )


def evaluate_predictions(
    model_name: str,
    split: str,
    predictives: Sequence[PredictiveDistribution],
    labels: Sequence[float],
    seed: int,
) -> MetricReport:
    """MetricReport from a list of predictive distributions.

    NLL is included only when every predictive carries a density (point
    predictions from the deterministic models have none).
    """
    means = [p.mean for p in predictives]
    nll_value = None
    if all(p.kind != "point" for p in predictives):
        nll_value = nll(predictives, labels)
    return metric_report(model_name, split, mse(means, labels), nll_value, len(labels), seed)


def aggregate(runs: Sequence[MetricReport]) -> dict:
    """Per-model mean/sample-sd of each metric over seeds, plus win counts.

    A model "wins" a seed on a metric when no other model run on that seed has
    a strictly smaller value.
    """
    runs = list(runs)
    if len(runs) < 2:
        raise InvalidArgumentError("aggregation needs at least two runs")
    splits = {r.split for r in runs}
    if len(splits) != 1:
        raise InvalidArgumentError(f"cannot aggregate across splits: {sorted(splits)}")

    by_model: Dict[str, List[MetricReport]] = {}
    for r in runs:
        by_model.setdefault(r.model, []).append(r)

    models = {}
    for name, rs in by_model.items():
        if len(rs) < 2:
            raise InvalidArgumentError(f"model {name!r} has fewer than two runs")
        entry = {"n_runs": len(rs), "seeds": sorted(r.seed for r in rs)}
        for metric in ("mse", "rmse", "nll"):
            vals = [getattr(r, metric) for r in rs]
            if any(v is None for v in vals):
                entry[metric] = None
                continue
            arr = np.asarray(vals, dtype=float)
            entry[metric] = {"mean": float(arr.mean()), "sd": float(arr.std(ddof=1))}
        models[name] = entry

    wins: Dict[str, Dict[str, int]] = {"mse": {}, "nll": {}}
    seeds = sorted({r.seed for r in runs})
    for metric in wins:
        for seed in seeds:
            here = [(r.model, getattr(r, metric)) for r in runs if r.seed == seed]
            here = [(m, v) for m, v in here if v is not None]
            if not here:
                continue
            best = min(v for _, v in here)
            for m, v in here:
                if v == best:
                    wins[metric][m] = wins[metric].get(m, 0) + 1

    return {
        "split": runs[0].split,
        "models": models,
        "win_counts": wins,
    }


def _fmt(value: Optional[float]) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return repr(float(value))


def prediction_rows(model: RegressionModel, dataset) -> List[dict]:
    """One row per bag: id, n, y_true, y_pred, y_sd (sd None for point kinds)."""
    preds = predict_dataset(model, dataset)
    rows = []
    for bag, pred in zip(dataset, preds):
        rows.append(
            {
                "id": bag.id,
                "n": bag.n,
                "y_true": bag.y,
                "y_pred": pred.mean,
                "y_sd": None if pred.kind == "point" else pred.sd,
            }
        )
    return rows


def dump_predictions(model: RegressionModel, dataset, path) -> List[dict]:
    """Write the per-bag prediction CSV; returns the rows written.

    Floats are written with repr so the file parses back bit-exact.
    """
    rows = prediction_rows(model, dataset)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTIONS_HEADER)
        for r in rows:
            writer.writerow(
                [r["id"], r["n"], _fmt(r["y_true"]), _fmt(r["y_pred"]), _fmt(r["y_sd"])]
            )
    return rows


def read_predictions(path) -> List[dict]:
    """Parse a prediction CSV back into row dicts (floats, None for blanks)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(PREDICTIONS_HEADER):
            raise InvalidArgumentError(f"unexpected prediction CSV header in {path}")
        for rec in reader:
            rows.append(
                {
                    "id": rec["id"],
                    "n": int(rec["n"]),
                    "y_true": float(rec["y_true"]) if rec["y_true"] else None,
                    "y_pred": float(rec["y_pred"]) if rec["y_pred"] else None,
                    "y_sd": float(rec["y_sd"]) if rec["y_sd"] else None,
                }
            )
    return rows
