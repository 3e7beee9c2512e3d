"""Command line interface: generate | train | evaluate | predict.

Flags override config-file values, which override built-in defaults.  Exit
codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

Heavy imports happen inside the command handlers so the BAGREG_THREADS cap
can land in the BLAS environment variables before numpy loads.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

GEN_DEFAULTS = {
    "n_train": 1000,
    "n_early": 500,
    "n_val": 500,
    "n_test": 1000,
    "dim": 5,
    "fixed_bag_size": None,
    "s5": None,
    "noise_sd": 0.0,
    "gamma_convention": "rate",
}

GRID_DEFAULTS = {
    "n_landmarks": (30, 50, 100),
    "bandwidth_factors": (0.25, 0.5, 1.0, 2.0, 4.0),
    "rhos": (0.1, 1.0, 10.0),
    "step_sizes": (1e-3, 3e-3, 1e-2),
    "etas": (0.1, 1.0, 10.0),
    "r_choice": "k",
    "conv_scale": 1.0,
    "max_epochs": 300,
    "patience": 30,
    "minibatch": 64,
    "learn_eta": True,
    "chains": 4,
    "warmup": 1000,
    "draws": 1000,
    "leapfrog_steps": 20,
    "target_accept": 0.8,
}


def _thread_cap_env():
    """Validate BAGREG_THREADS and push it into the BLAS env knobs."""
    cap = os.environ.get("BAGREG_THREADS")
    if cap is None:
        return None
    try:
        n = int(cap)
    except ValueError:
        n = 0
    if n < 1:
        return f"BAGREG_THREADS must be a positive integer, got {cap!r}"
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ.setdefault(var, str(n))
    return None


def _floats(v):
    if isinstance(v, (list, tuple)):
        return tuple(float(x) for x in v)
    return tuple(float(x) for x in str(v).split(","))


def _ints(v):
    if isinstance(v, (list, tuple)):
        return tuple(int(x) for x in v)
    return tuple(int(x) for x in str(v).split(","))


def _names(v):
    if isinstance(v, (list, tuple)):
        return [str(x) for x in v]
    return [s.strip() for s in str(v).split(",") if s.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bagreg", description="Distribution regression on bags of samples"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--seed", type=int, default=None)

    def gen_flags(p):
        p.add_argument("--n-train", type=int, default=None)
        p.add_argument("--n-early", type=int, default=None)
        p.add_argument("--n-val", type=int, default=None)
        p.add_argument("--n-test", type=int, default=None)
        p.add_argument("--dim", type=int, default=None)
        p.add_argument(
            "--fixed-bag-size", "--bag-size", dest="fixed_bag_size", type=int, default=None,
            help="every bag gets this many points (mutually exclusive with --s5)",
        )
        p.add_argument(
            "--s5", type=float, default=None,
            help="percent of bags at size 5 in the mixed-size family (sizes 5/20/100/1000)",
        )
        p.add_argument("--noise-sd", type=float, default=None)
        p.add_argument("--gamma-convention", choices=("rate", "scale"), default=None)

    def grid_flags(p):
        p.add_argument("--n-landmarks", default=None, help="comma-separated landmark counts")
        p.add_argument(
            "--bandwidth-factors", default=None,
            help="comma-separated multiples of the median pairwise distance",
        )
        p.add_argument("--rhos", default=None, help="comma-separated weight prior scales")
        p.add_argument("--step-sizes", default=None, help="comma-separated Adam step sizes")
        p.add_argument("--etas", default=None, help="comma-separated embedding prior strengths")
        p.add_argument("--r-choice", choices=("k", "conv"), default=None)
        p.add_argument("--conv-scale", type=float, default=None)
        p.add_argument("--max-epochs", type=int, default=None)
        p.add_argument("--patience", type=int, default=None)
        p.add_argument("--minibatch", type=int, default=None)
        p.add_argument(
            "--no-learn-eta", action="store_true", default=None,
            help="keep eta fixed at its grid value instead of learning it",
        )
        p.add_argument("--chains", type=int, default=None)
        p.add_argument("--warmup", type=int, default=None)
        p.add_argument("--draws", type=int, default=None)
        p.add_argument("--leapfrog-steps", type=int, default=None)
        p.add_argument("--target-accept", type=float, default=None)

    p = sub.add_parser("generate", help="write synthetic dataset splits plus a manifest")
    common(p)
    gen_flags(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="grid-tune and fit one model on generated splits")
    common(p)
    grid_flags(p)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--model", required=True, help="model kind (see README)")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--tuning-log", default=None, help="tuning CSV (default: <out>.tuning.csv)")
    p.add_argument("--noise-sd", type=float, default=None, help="oracle model only")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score saved models, or run the multi-seed protocol")
    common(p)
    gen_flags(p)
    grid_flags(p)
    p.add_argument("--data-dir", default=None)
    p.add_argument("--model-file", action="append", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument(
        "--multi-seed", type=int, default=None,
        help="run generate+train+evaluate over this many seeds and aggregate",
    )
    p.add_argument("--models", default=None, help="comma-separated kinds for --multi-seed")
    p.add_argument("--no-figures", action="store_true", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="write per-bag predictions for a saved model")
    common(p)
    p.add_argument("--model-file", required=True)
    p.add_argument("--data", required=True, help="dataset file (labels optional)")
    p.add_argument("--out", required=True, help="prediction CSV to write")
    p.set_defaults(func=cmd_predict)

    return parser


def _load_config_file(path):
    from .errors import DataFormatError

    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: invalid config file ({e.msg})") from None
    if not isinstance(cfg, dict):
        raise DataFormatError(f"{path}: config file must hold a JSON object")
    return cfg


def _merged(args, defaults):
    """Flag (if given) beats config file beats default, key by key."""
    cfg = _load_config_file(getattr(args, "config", None))
    out = {}
    for key, default in defaults.items():
        v = getattr(args, key, None)
        if v is None:
            v = cfg.get(key, default)
        out[key] = v
    return out


def _gamma_config(args, seed):
    from .datagen import GammaConfig

    g = _merged(args, GEN_DEFAULTS)
    return GammaConfig(
        n_train=g["n_train"],
        n_early=g["n_early"],
        n_val=g["n_val"],
        n_test=g["n_test"],
        dim=g["dim"],
        fixed_size=g["fixed_bag_size"],
        s5=g["s5"],
        noise_sd=g["noise_sd"],
        seed=seed,
        gamma_convention=g["gamma_convention"],
    )


def _train_settings(args, noise_sd=None, gamma_convention="rate", hmc_seed=0):
    from .experiment import TrainSettings
    from .models import BDRConfig

    g = _merged(args, GRID_DEFAULTS)
    learn_eta = g["learn_eta"]
    if getattr(args, "no_learn_eta", None):
        learn_eta = False
    hmc = BDRConfig(
        n_chains=g["chains"],
        n_warmup=g["warmup"],
        n_samples=g["draws"],
        leapfrog_steps=g["leapfrog_steps"],
        target_accept=g["target_accept"],
        seed=hmc_seed,
    )
    return TrainSettings(
        n_landmarks=_ints(g["n_landmarks"]),
        bandwidth_factors=_floats(g["bandwidth_factors"]),
        rhos=_floats(g["rhos"]),
        step_sizes=_floats(g["step_sizes"]),
        etas=_floats(g["etas"]),
        r_choice=g["r_choice"],
        conv_scale=g["conv_scale"],
        max_epochs=g["max_epochs"],
        patience=g["patience"],
        minibatch=g["minibatch"],
        learn_eta=bool(learn_eta),
        hmc=hmc,
        noise_sd=noise_sd,
        gamma_convention=gamma_convention,
    )


def _seed(args, default=0):
    cfg = _load_config_file(getattr(args, "config", None))
    if args.seed is not None:
        return args.seed
    return int(cfg.get("seed", default))


def _write_tuning_log(rows, path):
    keys = ["model", "metric", "val_metric"]
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys, restval="")
        writer.writeheader()
        writer.writerows(rows)


def cmd_generate(args) -> int:
    from .datagen import gamma_generate, write_splits

    seed = _seed(args)
    config = _gamma_config(args, seed)
    splits = gamma_generate(config)
    write_splits(splits, args.out_dir, config)
    for name, ds in splits.items():
        print(f"{name}: {len(ds)} bags -> {os.path.join(args.out_dir, name + '.ndjson')}")
    print(f"manifest: {os.path.join(args.out_dir, 'manifest.json')}")
    return EXIT_OK


def _resolved_noise_sd(args, data_dir):
    """--noise-sd flag, else the generator's value from the manifest."""
    if getattr(args, "noise_sd", None) is not None:
        return args.noise_sd
    from .datagen import read_manifest

    manifest = read_manifest(data_dir)
    cfg = manifest.get("config") or {}
    return cfg.get("noise_sd")


def cmd_train(args) -> int:
    from .datagen import load_splits, read_manifest
    from .experiment import SeedContext, tune_and_fit
    from .models import KINDS, OPTIMAL, save_model

    if args.model not in KINDS:
        from .errors import InvalidArgumentError

        raise InvalidArgumentError(f"unknown model kind {args.model!r} (choose from {KINDS})")
    seed = _seed(args)
    noise_sd = None
    convention = "rate"
    if args.model == OPTIMAL:
        noise_sd = _resolved_noise_sd(args, args.data_dir)
        cfg = read_manifest(args.data_dir).get("config") or {}
        convention = cfg.get("gamma_convention", "rate")
    settings = _train_settings(args, noise_sd=noise_sd, gamma_convention=convention, hmc_seed=seed)
    splits = load_splits(args.data_dir, names=("train", "early", "val"))
    ctx = SeedContext(splits, settings, seed)
    model, rows = tune_and_fit(args.model, ctx, seed)
    model.meta["seed"] = seed
    save_model(model, args.out)
    log_path = args.tuning_log or (args.out + ".tuning.csv")
    if rows:
        _write_tuning_log(rows, log_path)
        print(f"tuning log: {log_path} ({len(rows)} grid points)")
    best = model.meta.get("val_nll", model.meta.get("val_mse"))
    metric = "val NLL" if "val_nll" in model.meta else "val MSE"
    if best is not None:
        print(f"{args.model}: {metric} {best:.4f}")
    print(f"model: {args.out}")
    return EXIT_OK


def _evaluate_one(model, test, out_dir, stem, seed, figures):
    from .evaluation import dump_predictions
    from .experiment import evaluate_model

    report, _ = evaluate_model(model, test, "test", seed)
    report_path = os.path.join(out_dir, f"report_{stem}.json")
    with open(report_path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=1)
        fh.write("\n")
    csv_path = os.path.join(out_dir, f"predictions_{stem}.csv")
    rows = dump_predictions(model, test, csv_path)
    if figures:
        from .figures import prediction_figure

        prediction_figure(rows, os.path.join(out_dir, f"predictions_{stem}.png"), title=model.kind)
    nll_txt = "--" if report.nll is None else f"{report.nll:.4f}"
    print(f"{stem}: test MSE {report.mse:.4f}, NLL {nll_txt} ({report.n_bags} bags)")
    return report


def cmd_evaluate(args) -> int:
    from .errors import InvalidArgumentError

    os.makedirs(args.out_dir, exist_ok=True)
    figures = not getattr(args, "no_figures", None)
    if args.multi_seed is not None:
        return _cmd_evaluate_multi(args, figures)
    if not args.model_file:
        raise InvalidArgumentError("evaluate needs --model-file (or --multi-seed with --models)")
    if not args.data_dir:
        raise InvalidArgumentError("evaluate needs --data-dir")
    from .datagen import load_splits
    from .models import load_model

    test = load_splits(args.data_dir, names=("test",))["test"]
    seed = _seed(args)
    for path in args.model_file:
        model = load_model(path)
        stem = os.path.splitext(os.path.basename(path))[0]
        _evaluate_one(model, test, args.out_dir, stem, model.meta.get("seed", seed), figures)
    return EXIT_OK


def _cmd_evaluate_multi(args, figures) -> int:
    from .datagen import gamma_generate
    from .errors import InvalidArgumentError
    from .evaluation import aggregate
    from .experiment import SeedContext, evaluate_model, tune_and_fit
    from .models import OPTIMAL, save_model

    if args.multi_seed < 2:
        raise InvalidArgumentError("--multi-seed needs at least 2 seeds to aggregate")
    if not args.models:
        raise InvalidArgumentError("--multi-seed needs --models")
    kinds = _names(args.models)
    base_seed = _seed(args)
    runs = []
    models_dir = os.path.join(args.out_dir, "models")
    tuning_dir = os.path.join(args.out_dir, "tuning")
    os.makedirs(models_dir, exist_ok=True)
    os.makedirs(tuning_dir, exist_ok=True)
    config_echo = None
    last_models = {}
    for k in range(args.multi_seed):
        seed = base_seed + k
        config = _gamma_config(args, seed)
        if config_echo is None:
            config_echo = config.to_dict()
            del config_echo["seed"]
        splits = gamma_generate(config)
        settings = _train_settings(
            args,
            noise_sd=config.noise_sd if OPTIMAL in kinds else None,
            gamma_convention=config.gamma_convention,
            hmc_seed=seed,
        )
        ctx = SeedContext(
            {n: splits[n] for n in ("train", "early", "val")}, settings, seed
        )
        for kind in kinds:
            model, rows = tune_and_fit(kind, ctx, seed)
            model.meta["seed"] = seed
            save_model(model, os.path.join(models_dir, f"{kind}_seed{seed}.json"))
            if rows:
                _write_tuning_log(rows, os.path.join(tuning_dir, f"{kind}_seed{seed}.csv"))
            report, _ = evaluate_model(model, splits["test"], "test", seed)
            runs.append(report)
            last_models[kind] = (model, splits["test"])
            nll_txt = "--" if report.nll is None else f"{report.nll:.4f}"
            print(f"seed {seed} {kind}: test MSE {report.mse:.4f}, NLL {nll_txt}")
    summary = {
        "config": config_echo,
        "seeds": list(range(base_seed, base_seed + args.multi_seed)),
        "runs": [r.to_dict() for r in runs],
        "aggregate": aggregate(runs),
    }
    summary_path = os.path.join(args.out_dir, "summary.json")
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=1)
        fh.write("\n")
    print(f"summary: {summary_path}")
    for kind, entry in summary["aggregate"]["models"].items():
        mse_s = entry.get("mse")
        nll_s = entry.get("nll")
        mse_txt = f"{mse_s['mean']:.3f} ({mse_s['sd']:.3f})" if mse_s else "--"
        nll_txt = f"{nll_s['mean']:.3f} ({nll_s['sd']:.3f})" if nll_s else "--"
        print(f"{kind}: MSE {mse_txt}, NLL {nll_txt}")
    if figures:
        from .evaluation import dump_predictions
        from .figures import metric_figure, prediction_figure

        metric_figure(summary["aggregate"], os.path.join(args.out_dir, "metrics.png"))
        for kind, (model, test) in last_models.items():
            csv_path = os.path.join(args.out_dir, f"predictions_{kind}.csv")
            rows = dump_predictions(model, test, csv_path)
            prediction_figure(
                rows, os.path.join(args.out_dir, f"predictions_{kind}.png"), title=kind
            )
    return EXIT_OK


def cmd_predict(args) -> int:
    from .datagen import read_dataset
    from .evaluation import dump_predictions
    from .models import load_model

    model = load_model(args.model_file)
    dataset = read_dataset(args.data)
    rows = dump_predictions(model, dataset, args.out)
    print(f"{len(rows)} predictions -> {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    err = _thread_cap_env()
    if err is not None:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    parser = build_parser()
    args = parser.parse_args(argv)

    from .errors import DataFormatError, InvalidArgumentError, NumericalError

    try:
        return args.func(args)
    except InvalidArgumentError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataFormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
