"""Grid tuning and experiment orchestration.

One seed means: one landmark set per landmark count (k-means on the pooled
training points, shared by every model), one featurization pass per bandwidth
(shared likewise), then per-model grid search.  Models whose predictions carry
a density tune on validation NLL, the rest on validation MSE.  Early stopping
always runs against the dedicated early-stop split; the best checkpoint is
kept as-is, nothing is refit afterwards.

The full BDR chain is sampled once at the shrinkage model's tuned
hyperparameters (bandwidth, rho, eta) and initialized at its MAP weights;
running HMC inside the grid would multiply its cost for no tuning signal the
MAP surface does not already give.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .embeddings import BagDataset, embed_dataset
from .errors import InvalidArgumentError, NumericalError
from .evaluation import MetricReport, evaluate_predictions
from .kernels import (
    KernelParams,
    LandmarkSet,
    R_K,
    kmeans_landmarks,
    median_heuristic,
)
from .models import (
    BASELINE,
    BDR,
    BLR,
    FREQ_SHRINK,
    OPTIMAL,
    PROBIT_BLR,
    PROBIT_SHRINK,
    SHRINK_MAP,
    BDRConfig,
    FitConfig,
    RegressionModel,
    ShrinkFitConfig,
    ShrinkageWorkspace,
    baseline_fit,
    bdr_data,
    bdr_fit,
    blr_fit,
    blr_predict,
    empirical_probit_data,
    predict_dataset,
    probit_map_fit,
    probit_objective_and_grad,
    shrinkmap_fit,
)
from .embeddings import EmbeddingStats

# kinds tuned on validation NLL; everything else tunes on validation MSE
NLL_TUNED = (BLR, SHRINK_MAP, BDR, PROBIT_SHRINK, PROBIT_BLR)

KMEANS_CAP = 20000


@dataclass(frozen=True)
class TrainSettings:
    """Tuning grids and fit budgets; defaults are the documented CLI grids."""

    n_landmarks: Tuple[int, ...] = (30, 50, 100)
    bandwidth_factors: Tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 4.0)
    rhos: Tuple[float, ...] = (0.1, 1.0, 10.0)
    step_sizes: Tuple[float, ...] = (1e-3, 3e-3, 1e-2)
    etas: Tuple[float, ...] = (0.1, 1.0, 10.0)
    r_choice: str = R_K
    conv_scale: float = 1.0
    max_epochs: int = 300
    patience: int = 30
    minibatch: int = 64
    learn_eta: bool = True
    hmc: BDRConfig = BDRConfig()
    noise_sd: Optional[float] = None  # oracle kind only
    gamma_convention: str = "rate"

    def fit_config(self, step_size: float, seed: int) -> FitConfig:
        return FitConfig(
            step_size=step_size,
            minibatch=self.minibatch,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=seed,
        )


class SeedContext:
    """Shared per-seed state: landmark sets, featurizations, workspaces.

    Everything is cached so that the five regression models reuse the same
    k-means landmarks and the same embedding tables at each bandwidth.
    """

    def __init__(self, splits: Dict[str, BagDataset], settings: TrainSettings, seed: int):
        for name in ("train", "early", "val"):
            if name not in splits:
                raise InvalidArgumentError(f"missing split {name!r}")
        self.splits = splits
        self.settings = settings
        self.seed = seed
        self._landmarks: Dict[int, LandmarkSet] = {}
        self._embs: Dict[Tuple[int, float], tuple] = {}
        self._ws: Dict[Tuple[int, float], dict] = {}
        self._median: Optional[float] = None
        self._tuned: Dict[tuple, tuple] = {}

    @property
    def median_distance(self) -> float:
        if self._median is None:
            self._median = median_heuristic(self.splits["train"].all_points(), seed=self.seed)
        return self._median

    def bandwidths(self) -> List[float]:
        med = self.median_distance
        return [f * med for f in self.settings.bandwidth_factors]

    def landmarks(self, d: int) -> LandmarkSet:
        if d not in self._landmarks:
            pts = self.splits["train"].all_points()
            if pts.shape[0] > KMEANS_CAP:
                # k-means cost is linear in the pool; a fixed-size subsample
                # loses nothing at these landmark counts
                rng = np.random.default_rng(self.seed)
                pts = pts[rng.choice(pts.shape[0], size=KMEANS_CAP, replace=False)]
            self._landmarks[d] = kmeans_landmarks(pts, d, seed=self.seed)
        return self._landmarks[d]

    def kernel_params(self, bandwidth: float) -> KernelParams:
        return KernelParams(
            bandwidth=bandwidth,
            conv_scale=self.settings.conv_scale,
            r_choice=self.settings.r_choice,
        )

    def embeddings(self, d: int, bandwidth: float):
        """(embeddings per split, pooled NoiseModel from the train split)."""
        key = (d, float(bandwidth))
        if key not in self._embs:
            params = self.kernel_params(bandwidth)
            lms = self.landmarks(d)
            train_emb, noise = embed_dataset(self.splits["train"], lms, params, with_noise=True)
            embs = {"train": train_emb}
            for name, ds in self.splits.items():
                if name != "train":
                    embs[name] = embed_dataset(ds, lms, params)
            self._embs[key] = (embs, noise)
        return self._embs[key]

    def workspaces(self, d: int, bandwidth: float) -> dict:
        key = (d, float(bandwidth))
        if key not in self._ws:
            embs, noise = self.embeddings(d, bandwidth)
            params = self.kernel_params(bandwidth)
            lms = self.landmarks(d)
            self._ws[key] = {
                name: ShrinkageWorkspace(emb, noise, lms, params) for name, emb in embs.items()
            }
        return self._ws[key]


def _grid_row(kind, metric_name, val_metric, **point):
    row = {"model": kind, "metric": metric_name, "val_metric": val_metric}
    row.update(point)
    return row


def _val_mse(beta, intercept, emb):
    pred = emb.mu @ beta + intercept
    return float(np.mean((pred - emb.labels) ** 2))


def _tune_baseline(ctx: SeedContext, seed: int):
    st = ctx.settings
    best = None
    rows = []
    for d in st.n_landmarks:
        for bw in ctx.bandwidths():
            embs, _ = ctx.embeddings(d, bw)
            for rho in st.rhos:
                for step in st.step_sizes:
                    beta, b, meta = baseline_fit(
                        embs["train"].mu,
                        embs["train"].labels,
                        embs["early"].mu,
                        embs["early"].labels,
                        rho,
                        st.fit_config(step, seed),
                    )
                    val = _val_mse(beta, b, embs["val"])
                    rows.append(
                        _grid_row(BASELINE, "mse", val, d=d, bandwidth=bw, rho=rho, step=step)
                    )
                    if meta["diverged"]:
                        rows[-1]["diverged"] = True
                        continue
                    if best is None or val < best[0]:
                        model = RegressionModel(
                            kind=BASELINE,
                            kernel=ctx.kernel_params(bw),
                            landmarks=ctx.landmarks(d),
                            alpha=beta,
                            intercept=b,
                            has_intercept=True,
                            rho=rho,
                            meta={"val_mse": val, "fit": meta, "step_size": step},
                        )
                        best = (val, model)
    return best, rows


def _tune_freq_shrink(ctx: SeedContext, seed: int):
    """Linear readout on shrunk embeddings; eta acts as the shrinkage knob."""
    st = ctx.settings
    best = None
    rows = []
    for d in st.n_landmarks:
        for bw in ctx.bandwidths():
            ws = ctx.workspaces(d, bw)
            for eta in st.etas:
                shrunk = {name: w.posterior_means(eta) for name, w in ws.items()}
                for rho in st.rhos:
                    for step in st.step_sizes:
                        beta, b, meta = baseline_fit(
                            shrunk["train"],
                            ws["train"].labels,
                            shrunk["early"],
                            ws["early"].labels,
                            rho,
                            st.fit_config(step, seed),
                        )
                        val = float(np.mean((shrunk["val"] @ beta + b - ws["val"].labels) ** 2))
                        rows.append(
                            _grid_row(
                                FREQ_SHRINK, "mse", val, d=d, bandwidth=bw, eta=eta, rho=rho, step=step
                            )
                        )
                        if meta["diverged"]:
                            rows[-1]["diverged"] = True
                            continue
                        if best is None or val < best[0]:
                            model = RegressionModel(
                                kind=FREQ_SHRINK,
                                kernel=ctx.kernel_params(bw),
                                landmarks=ctx.landmarks(d),
                                alpha=beta,
                                intercept=b,
                                has_intercept=True,
                                rho=rho,
                                eta=eta,
                                m0=ws["train"].noise.m0,
                                Sigma=ws["train"].noise.Sigma,
                                meta={"val_mse": val, "fit": meta, "step_size": step},
                            )
                            best = (val, model)
    return best, rows


def _blr_val_nll(model: RegressionModel, emb) -> float:
    preds = [
        blr_predict(model, EmbeddingStats(mu_hat=emb.mu[i], n=int(emb.sizes[i])))
        for i in range(emb.mu.shape[0])
    ]
    return -float(np.mean([p.logpdf(y) for p, y in zip(preds, emb.labels)]))


def _tune_blr(ctx: SeedContext, seed: int):
    """(sigma, rho) come from evidence ascent, so the grid is bandwidth only."""
    st = ctx.settings
    best = None
    rows = []
    for d in st.n_landmarks:
        for bw in ctx.bandwidths():
            embs, _ = ctx.embeddings(d, bw)
            w, b, cov, sigma, rho, info = blr_fit(
                embs["train"].mu, embs["train"].labels, intercept=True, optimize=True
            )
            model = RegressionModel(
                kind=BLR,
                kernel=ctx.kernel_params(bw),
                landmarks=ctx.landmarks(d),
                alpha=w,
                intercept=b,
                has_intercept=True,
                sigma=sigma,
                rho=rho,
                blr_cov=cov,
                meta={"evidence": info.get("evidence")},
            )
            val = _blr_val_nll(model, embs["val"])
            model.meta["val_nll"] = val
            rows.append(_grid_row(BLR, "nll", val, d=d, bandwidth=bw, sigma=sigma, rho=rho))
            if best is None or val < best[0]:
                best = (val, model)
    return best, rows


def _tune_shrinkage(ctx: SeedContext, seed: int):
    # memoized: the BDR path reuses the shrinkage grid search wholesale
    key = (SHRINK_MAP, seed)
    if key in ctx._tuned:
        return ctx._tuned[key]
    st = ctx.settings
    best = None
    rows = []
    for d in st.n_landmarks:
        for bw in ctx.bandwidths():
            ws = ctx.workspaces(d, bw)
            for rho in st.rhos:
                for eta0 in st.etas:
                    for step in st.step_sizes:
                        config = ShrinkFitConfig(
                            step_size=step,
                            minibatch=st.minibatch,
                            max_epochs=st.max_epochs,
                            patience=st.patience,
                            seed=seed,
                            rho=rho,
                            init_eta=eta0,
                            learn_eta=st.learn_eta,
                        )
                        alpha, sigma, eta, meta = shrinkmap_fit(ws["train"], ws["early"], config)
                        val = ws["val"].mean_nll(alpha, sigma, eta)
                        rows.append(
                            _grid_row(
                                SHRINK_MAP,
                                "nll",
                                val,
                                d=d,
                                bandwidth=bw,
                                rho=rho,
                                eta0=eta0,
                                step=step,
                            )
                        )
                        if meta["diverged"]:
                            rows[-1]["diverged"] = True
                            continue
                        if best is None or val < best[0]:
                            model = RegressionModel(
                                kind=SHRINK_MAP,
                                kernel=ctx.kernel_params(bw),
                                landmarks=ctx.landmarks(d),
                                alpha=alpha,
                                sigma=sigma,
                                rho=rho,
                                eta=eta,
                                m0=ws["train"].noise.m0,
                                Sigma=ws["train"].noise.Sigma,
                                meta={
                                    "val_nll": val,
                                    "fit": meta,
                                    "step_size": step,
                                    "init_eta": eta0,
                                },
                            )
                            best = (val, model)
    ctx._tuned[key] = (best, rows)
    return best, rows


def _tune_bdr(ctx: SeedContext, seed: int):
    """Sample at the shrinkage-tuned hyperparameters, initialized at its MAP."""
    st = ctx.settings
    shrink_best, shrink_rows = _tune_shrinkage(ctx, seed)
    if shrink_best is None:
        raise InvalidArgumentError("shrinkage tuning produced no usable fit for BDR")
    map_model = shrink_best[1]
    d = map_model.landmarks.n_obs
    bw = map_model.kernel.bandwidth
    ws = ctx.workspaces(d, bw)
    data = bdr_data(ws["train"], map_model.eta)
    hmc = replace(st.hmc, seed=seed)
    draws, sigma_draws, chains, meta = bdr_fit(
        ws["train"].kz,
        data,
        map_model.rho,
        hmc,
        init_alpha=map_model.alpha,
        init_sigma=map_model.sigma,
    )
    model = RegressionModel(
        kind=BDR,
        kernel=map_model.kernel,
        landmarks=map_model.landmarks,
        alpha=draws.mean(axis=0),
        sigma=float(np.mean(sigma_draws)),
        rho=map_model.rho,
        eta=map_model.eta,
        m0=map_model.m0,
        Sigma=map_model.Sigma,
        posterior_draws=draws,
        sigma_draws=sigma_draws,
        meta={"hmc": meta, "map_val_nll": map_model.meta.get("val_nll")},
    )
    preds = predict_dataset(model, ctx.splits["val"])
    val = -float(np.mean([p.logpdf(y) for p, y in zip(preds, ctx.splits["val"].labels)]))
    model.meta["val_nll"] = val
    rows = shrink_rows + [
        _grid_row(BDR, "nll", val, d=d, bandwidth=bw, rho=map_model.rho, eta=map_model.eta)
    ]
    return (val, model), rows


def _probit_val_nll(alpha, data) -> float:
    val, _ = probit_objective_and_grad(alpha, data, np.zeros((alpha.size, alpha.size)), rho=math.inf)
    return val / data.labels.size


def _tune_probit(ctx: SeedContext, seed: int, kind: str):
    from .models.bdr import BDRData

    st = ctx.settings
    best = None
    rows = []
    for d in st.n_landmarks:
        for bw in ctx.bandwidths():
            if kind == PROBIT_SHRINK:
                ws = ctx.workspaces(d, bw)
                etas = st.etas
            else:
                embs, _ = ctx.embeddings(d, bw)
                etas = (None,)
            for eta in etas:
                if kind == PROBIT_SHRINK:
                    datas = {
                        name: BDRData(
                            m_rows=w.posterior_means(eta),
                            groups=[(g.idx, w.posterior_cov(eta, g.n)) for g in w.groups],
                            labels=w.labels,
                        )
                        for name, w in ws.items()
                    }
                    kz = ws["train"].kz
                else:
                    datas = {
                        name: empirical_probit_data(emb.mu, emb.labels)
                        for name, emb in embs.items()
                    }
                    kz = ctx.workspaces(d, bw)["train"].kz
                for rho in st.rhos:
                    for step in st.step_sizes:
                        alpha, meta = probit_map_fit(
                            datas["train"], datas["early"], kz, rho, st.fit_config(step, seed)
                        )
                        val = _probit_val_nll(alpha, datas["val"])
                        point = dict(d=d, bandwidth=bw, rho=rho, step=step)
                        if eta is not None:
                            point["eta"] = eta
                        rows.append(_grid_row(kind, "nll", val, **point))
                        if meta["diverged"]:
                            rows[-1]["diverged"] = True
                            continue
                        if best is None or val < best[0]:
                            ws_train = ctx.workspaces(d, bw)["train"]
                            model = RegressionModel(
                                kind=kind,
                                kernel=ctx.kernel_params(bw),
                                landmarks=ctx.landmarks(d),
                                alpha=alpha,
                                rho=rho,
                                eta=eta,
                                m0=ws_train.noise.m0 if kind == PROBIT_SHRINK else None,
                                Sigma=ws_train.noise.Sigma if kind == PROBIT_SHRINK else None,
                                binary=True,
                                meta={"val_nll": val, "fit": meta, "step_size": step},
                            )
                            best = (val, model)
    return best, rows


def tune_and_fit(kind: str, ctx: SeedContext, seed: int = 0):
    """Grid-tune and fit one model kind; returns (model, tuning rows)."""
    if kind == OPTIMAL:
        if ctx.settings.noise_sd is None:
            raise InvalidArgumentError("oracle model needs noise_sd in the settings")
        model = RegressionModel(
            kind=OPTIMAL,
            noise_sd=ctx.settings.noise_sd,
            gamma_convention=ctx.settings.gamma_convention,
        )
        return model, []
    if kind == BASELINE:
        best, rows = _tune_baseline(ctx, seed)
    elif kind == FREQ_SHRINK:
        best, rows = _tune_freq_shrink(ctx, seed)
    elif kind == BLR:
        best, rows = _tune_blr(ctx, seed)
    elif kind == SHRINK_MAP:
        best, rows = _tune_shrinkage(ctx, seed)
    elif kind == BDR:
        best, rows = _tune_bdr(ctx, seed)
    elif kind in (PROBIT_SHRINK, PROBIT_BLR):
        best, rows = _tune_probit(ctx, seed, kind)
    else:
        raise InvalidArgumentError(f"unknown model kind {kind!r}")
    if best is None:
        raise NumericalError(f"every grid point diverged for {kind!r}")
    return best[1], rows


def evaluate_model(model: RegressionModel, dataset: BagDataset, split: str, seed: int):
    """(MetricReport, predictive list) on a labeled dataset."""
    labels = dataset.labels
    if np.any(~np.isfinite(labels)):
        raise InvalidArgumentError("evaluation needs labels on every bag")
    preds = predict_dataset(model, dataset)
    report = evaluate_predictions(model.kind, split, preds, labels, seed)
    return report, preds
