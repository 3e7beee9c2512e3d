"""Shared model container and its on-disk format.

A RegressionModel is one self-describing object regardless of kind: the kind
tag selects the prediction rule, and unused fields stay None.  Serialization
is a single JSON file; floats go through Python's shortest-round-trip repr, so
save -> load -> predict is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..embeddings import NoiseModel
from ..errors import DataFormatError, InvalidArgumentError
from ..kernels import GramMatrices, KernelParams, LandmarkSet, build_grams

BASELINE = "baseline"
FREQ_SHRINK = "freq-shrinkage"
BLR = "blr"
SHRINK_MAP = "shrinkage"
BDR = "bdr"
PROBIT_SHRINK = "probit-shrinkage"
PROBIT_BLR = "probit-blr"
OPTIMAL = "optimal"

KINDS = (BASELINE, FREQ_SHRINK, BLR, SHRINK_MAP, BDR, PROBIT_SHRINK, PROBIT_BLR, OPTIMAL)

# kinds whose predictions carry a density
PROBABILISTIC_KINDS = (BLR, SHRINK_MAP, BDR, PROBIT_SHRINK, PROBIT_BLR, OPTIMAL)

MODEL_FORMAT = "bagreg-model"
MODEL_VERSION = 1


@dataclass
class RegressionModel:
    kind: str
    kernel: Optional[KernelParams] = None
    landmarks: Optional[LandmarkSet] = None
    alpha: Optional[np.ndarray] = None  # weights: alpha for kernel models, beta for feature models
    intercept: float = 0.0
    has_intercept: bool = False
    sigma: Optional[float] = None  # observation noise
    rho: Optional[float] = None  # weight prior scale
    eta: Optional[float] = None  # embedding prior strength
    m0: Optional[np.ndarray] = None
    Sigma: Optional[np.ndarray] = None  # pooled feature covariance
    blr_cov: Optional[np.ndarray] = None  # weight posterior covariance (features [+ intercept])
    posterior_draws: Optional[np.ndarray] = None  # (T, s) alpha draws
    sigma_draws: Optional[np.ndarray] = None  # (T,) observation-noise draws
    noise_sd: Optional[float] = None  # oracle: generator noise level
    gamma_convention: str = "rate"
    binary: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown model kind {self.kind!r}")
        for name in ("sigma", "rho", "eta"):
            v = getattr(self, name)
            if v is not None and not (np.isfinite(v) and v > 0):
                raise InvalidArgumentError(f"{name} must be positive, got {v}")
        if self.kind == BDR:
            if self.posterior_draws is not None and len(self.posterior_draws) == 0:
                raise InvalidArgumentError("fitted BDR model requires posterior draws")
        elif self.posterior_draws is not None:
            raise InvalidArgumentError(f"{self.kind} must not carry posterior draws")
        for name in ("alpha", "m0", "Sigma", "blr_cov", "posterior_draws", "sigma_draws"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=float))

    def noise(self) -> NoiseModel:
        if self.Sigma is None or self.m0 is None:
            raise InvalidArgumentError(f"{self.kind} model carries no noise model")
        return NoiseModel(Sigma=self.Sigma, m0=self.m0)

    def grams(self) -> GramMatrices:
        if self.kernel is None or self.landmarks is None:
            raise InvalidArgumentError(f"{self.kind} model carries no kernel")
        return build_grams(self.landmarks, self.kernel, eta=self.eta if self.eta else 1.0)


def _arr(a):
    if a is None:
        return None
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        return [float(v) for v in a]
    return [[float(v) for v in row] for row in a]


def _unarr(v):
    return None if v is None else np.array(v, dtype=float)


def model_to_dict(model: RegressionModel) -> dict:
    kernel = None
    if model.kernel is not None:
        kernel = {
            "bandwidth": model.kernel.bandwidth,
            "conv_scale": model.kernel.conv_scale,
            "r_choice": model.kernel.r_choice,
        }
    landmarks = None
    if model.landmarks is not None:
        landmarks = {
            "u": _arr(model.landmarks.u),
            "z": None if model.landmarks.tied else _arr(model.landmarks.z),
            "tied": model.landmarks.tied,
        }
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": model.kind,
        "binary": model.binary,
        "kernel": kernel,
        "landmarks": landmarks,
        "alpha": _arr(model.alpha),
        "intercept": model.intercept,
        "has_intercept": model.has_intercept,
        "sigma": model.sigma,
        "rho": model.rho,
        "eta": model.eta,
        "m0": _arr(model.m0),
        "Sigma": _arr(model.Sigma),
        "blr_cov": _arr(model.blr_cov),
        "posterior_draws": _arr(model.posterior_draws),
        "sigma_draws": _arr(model.sigma_draws),
        "noise_sd": model.noise_sd,
        "gamma_convention": model.gamma_convention,
        "meta": model.meta,
    }


def model_from_dict(d: dict) -> RegressionModel:
    if not isinstance(d, dict) or d.get("format") != MODEL_FORMAT:
        raise DataFormatError("not a model file (missing format tag)")
    if d.get("version") != MODEL_VERSION:
        raise DataFormatError(f"unsupported model version {d.get('version')!r}")
    kernel = None
    if d.get("kernel") is not None:
        k = d["kernel"]
        kernel = KernelParams(
            bandwidth=k["bandwidth"], conv_scale=k["conv_scale"], r_choice=k["r_choice"]
        )
    landmarks = None
    if d.get("landmarks") is not None:
        lm = d["landmarks"]
        u = _unarr(lm["u"])
        tied = bool(lm["tied"])
        z = u if tied else _unarr(lm["z"])
        landmarks = LandmarkSet(u=u, z=z, tied=tied)
    try:
        return RegressionModel(
            kind=d["kind"],
            kernel=kernel,
            landmarks=landmarks,
            alpha=_unarr(d.get("alpha")),
            intercept=float(d.get("intercept", 0.0)),
            has_intercept=bool(d.get("has_intercept", False)),
            sigma=d.get("sigma"),
            rho=d.get("rho"),
            eta=d.get("eta"),
            m0=_unarr(d.get("m0")),
            Sigma=_unarr(d.get("Sigma")),
            blr_cov=_unarr(d.get("blr_cov")),
            posterior_draws=_unarr(d.get("posterior_draws")),
            sigma_draws=_unarr(d.get("sigma_draws")),
            noise_sd=d.get("noise_sd"),
            gamma_convention=d.get("gamma_convention", "rate"),
            binary=bool(d.get("binary", False)),
            meta=d.get("meta", {}),
        )
    except (KeyError, TypeError, InvalidArgumentError) as e:
        raise DataFormatError(f"malformed model file: {e}") from None


@dataclass(frozen=True)
class FitConfig:
    """Settings shared by every Adam + early-stopping fit."""

    step_size: float = 1e-3
    minibatch: int = 64
    max_epochs: int = 300
    patience: int = 30  # early-stopping patience, in held-out evaluations
    seed: int = 0

    def __post_init__(self):
        if self.step_size <= 0 or self.minibatch < 1 or self.max_epochs < 1 or self.patience < 1:
            raise InvalidArgumentError("fit settings must be positive")


def minibatch_fit(theta0, batch_grad, n_data: int, eval_metric, config: FitConfig):
    """Adam over shuffled minibatches with early stopping on a held-out metric.

    batch_grad(theta, idx) returns the gradient estimate for the index batch;
    eval_metric(theta) is evaluated once per epoch and drives early stopping
    (lower is better).  Returns (best_theta, meta).  A non-finite gradient
    aborts the fit and returns the last finite iterate with a diagnostic flag.
    """
    from ..errors import NumericalError as _NumErr
    from ..inference import OptimizerState, adam_step, early_stopper

    rng = np.random.default_rng(config.seed)
    state = OptimizerState(params=np.asarray(theta0, dtype=float), step_size=config.step_size)
    history = [float(eval_metric(state.params))]
    best_theta = state.params.copy()
    meta = {"diverged": False, "epochs": 0, "eval_history": history}
    for epoch in range(config.max_epochs):
        order = rng.permutation(n_data)
        for start in range(0, n_data, config.minibatch):
            idx = order[start : start + config.minibatch]
            try:
                g = batch_grad(state.params, idx)
                state = adam_step(state, g)
            except _NumErr as e:
                meta["diverged"] = True
                meta["divergence"] = str(e)
                meta["epochs"] = epoch
                return best_theta, meta
        history.append(float(eval_metric(state.params)))
        decision, best = early_stopper(history, config.patience)
        if best == len(history) - 1:
            best_theta = state.params.copy()
        if decision == "stop":
            break
    meta["epochs"] = len(history) - 1
    meta["best_eval"] = float(np.min(history))
    return best_theta, meta


def save_model(model: RegressionModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_model(path) -> RegressionModel:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: invalid model file ({e.msg})") from None
    return model_from_dict(d)
