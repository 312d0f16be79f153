"""Command-line entry point: ``epigp <command> [options]``.

Configuration is resolved as defaults < ``--config`` JSON file < flags.
Every JSON artifact has the top-level keys ``config``, ``version``,
``metrics`` and one of ``records`` / ``report`` / ``table``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .baselines import compare, fit_baseline_in_sample, run_baseline_windows
from .bounds import VARIANCE_BOUND_FORMS, BoundConfig, check_error_bound, empirical_lipschitz, error_bound
from .errors import ConfigError, DataError, EpiGPError
from .forecast import (
    ForecastRecord,
    WindowSpec,
    evaluate,
    fit_in_sample,
    run_moving_window,
    sensitivity_sweep,
)
from .gp import KernelParams, NoiseModel, TrainSet, hyperparameter_grid, posterior
from .io import OWID_URL, dumps_json, fetch_owid, ingest_csv, write_csv, write_json, write_text_atomic
from .svg import records_chart
from .transform import log_difference, rolling_average

COMMANDS = ("fit", "predict", "bounds", "baseline", "sensitivity", "plot", "fetch")


@dataclass
class RunConfig:
    input_path: str | None = None
    fill: str | None = None
    epsilon_floor: float | None = None
    smoothing_window: int = 30
    lag: int = 7
    noise_variance: float = 0.002
    train_length: int = 30
    horizon: int = 20
    stride: int | None = None
    signal_variance: float | None = None
    length_scale: float | None = None
    signal_variance_min: float = 1e-4
    signal_variance_max: float = 10.0
    signal_variance_points: int = 11
    length_scale_min: float = 1.0
    length_scale_max: float = 100.0
    length_scale_points: int = 13
    freeze_hp: bool = False
    tau: float = 5.0
    delta: float = 0.05
    lipschitz_target: float = 0.01
    empirical_lipschitz: bool = False
    interval_length: float = 50.0
    radius: float | None = None
    variance_form: str = "alpha4"
    check_trials: int = 0
    level: float = 0.95
    mode: str = "observation"
    protocol: str = "predict"
    poly_degree: int | None = None
    knn_kappa: int | None = None
    windows: list = field(default_factory=lambda: [1, 3, 5, 10, 20, 30, 50])
    lags: list = field(default_factory=lambda: [7])
    records_path: str | None = None
    output_dir: str = "out"
    seed: int = 0
    workers: int | None = None

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        unknown = sorted(set(values) - set(cls.keys()))
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        def need(ok, msg):
            if not ok:
                raise ConfigError(msg)

        for name in ("smoothing_window", "lag", "train_length", "horizon",
                     "signal_variance_points", "length_scale_points"):
            need(isinstance(getattr(self, name), int) and getattr(self, name) >= 1,
                 f"{name} must be a positive integer")
        need(self.stride is None or (isinstance(self.stride, int) and self.stride >= 1),
             "stride must be a positive integer")
        need(self.noise_variance > 0, "noise_variance must be positive")
        need((self.signal_variance is None) == (self.length_scale is None),
             "signal_variance and length_scale must be given together")
        for name in ("signal_variance", "length_scale", "radius"):
            v = getattr(self, name)
            need(v is None or v > 0, f"{name} must be positive")
        need(0 < self.signal_variance_min <= self.signal_variance_max, "bad signal variance grid bounds")
        need(0 < self.length_scale_min <= self.length_scale_max, "bad length scale grid bounds")
        need(self.tau > 0 and self.interval_length > 0, "tau and interval_length must be positive")
        need(0 < self.delta < 1, "delta must lie in (0, 1)")
        need(self.lipschitz_target >= 0, "lipschitz_target must be non-negative")
        need(self.variance_form in VARIANCE_BOUND_FORMS, f"variance_form must be one of {VARIANCE_BOUND_FORMS}")
        need(0 < self.level < 1, "level must lie in (0, 1)")
        need(self.mode in ("observation", "latent"), "mode must be 'observation' or 'latent'")
        need(self.protocol in ("predict", "fit"), "protocol must be 'predict' or 'fit'")
        need(self.fill in (None, "forward"), "fill must be 'forward' or unset")
        need(self.epsilon_floor is None or self.epsilon_floor > 0, "epsilon_floor must be positive")
        need(self.poly_degree is None or self.poly_degree >= 0, "poly_degree must be non-negative")
        need(self.knn_kappa is None or self.knn_kappa >= 1, "knn_kappa must be positive")
        need(isinstance(self.check_trials, int) and self.check_trials >= 0, "check_trials must be >= 0")
        need(self.workers is None or self.workers >= 1, "workers must be positive")
        need(all(isinstance(w, int) and w >= 1 for w in self.windows), "windows must be positive integers")
        need(all(isinstance(w, int) and w >= 1 for w in self.lags), "lags must be positive integers")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    # derived objects
    def noise(self) -> NoiseModel:
        return NoiseModel(self.noise_variance)

    def spec(self) -> WindowSpec:
        return WindowSpec(self.train_length, self.horizon, self.stride)

    def hp_policy(self):
        if self.signal_variance is not None:
            return KernelParams(self.signal_variance, self.length_scale)
        return hyperparameter_grid(
            (self.signal_variance_min, self.signal_variance_max),
            self.signal_variance_points,
            (self.length_scale_min, self.length_scale_max),
            self.length_scale_points,
        )


def _require_input(cfg: RunConfig) -> str:
    if not cfg.input_path:
        raise ConfigError("an input CSV is required (--input)")
    return cfg.input_path


def _load_raw(cfg: RunConfig):
    return ingest_csv(_require_input(cfg), fill=cfg.fill, epsilon_floor=cfg.epsilon_floor)


def _load_deltas(cfg: RunConfig):
    raw = _load_raw(cfg)
    return log_difference(rolling_average(raw, cfg.smoothing_window), cfg.lag)


def _payload(cfg: RunConfig, key: str, body, metrics) -> dict:
    return {"config": cfg.to_dict(), key: body, "metrics": metrics, "version": __version__}


def _out(cfg: RunConfig, name: str) -> Path:
    return Path(cfg.output_dir) / name


def cmd_fit(cfg: RunConfig) -> list[Path]:
    deltas = _load_deltas(cfg)
    record = fit_in_sample(deltas, cfg.hp_policy(), cfg.noise(), cfg.level)
    metrics = evaluate([record], mode=cfg.mode)
    return [write_json(_out(cfg, "fit.json"), _payload(cfg, "records", [record.to_dict()], metrics.to_dict()))]


def cmd_predict(cfg: RunConfig) -> list[Path]:
    deltas = _load_deltas(cfg)
    records = run_moving_window(
        deltas, cfg.spec(), cfg.hp_policy(), cfg.noise(), cfg.level, cfg.freeze_hp, cfg.workers
    )
    metrics = evaluate(records, mode=cfg.mode)
    body = [r.to_dict() for r in records]
    return [write_json(_out(cfg, "predict.json"), _payload(cfg, "records", body, metrics.to_dict()))]


def cmd_bounds(cfg: RunConfig) -> list[Path]:
    deltas = _load_deltas(cfg)
    noise = cfg.noise()
    records = run_moving_window(
        deltas, cfg.spec(), cfg.hp_policy(), noise, cfg.level, cfg.freeze_hp, cfg.workers
    )
    reports = []
    within = total = 0
    for rec in records:
        mask = np.isin(deltas.times, rec.train_times.astype(np.int64))
        train = TrainSet(deltas.times[mask].astype(float), deltas.deltas[mask])
        target = empirical_lipschitz(train.times, train.targets) if cfg.empirical_lipschitz else cfg.lipschitz_target
        bcfg = BoundConfig(cfg.tau, cfg.delta, target, cfg.interval_length, cfg.radius)
        post = posterior(rec.params, noise, train, rec.test_times)
        report = error_bound(post, bcfg, rec.params, noise, train, cfg.variance_form)
        err = np.abs(rec.actuals - post.mean)
        within += int(np.count_nonzero(err <= report.per_point_bound))
        total += err.size
        entry = {"window_index": rec.window_index, "params": rec.params.to_dict(),
                 "lipschitz_target_source": "empirical" if cfg.empirical_lipschitz else "config",
                 "abs_error": err.tolist(), **report.to_dict()}
        reports.append(entry)
    metrics = {
        "windows": len(reports),
        "points": total,
        "fraction_within_bound": within / total if total else None,
    }
    if cfg.check_trials:
        ref = records[0]
        check = check_error_bound(
            ref.params, noise,
            BoundConfig(cfg.tau, cfg.delta, 0.0, cfg.interval_length, cfg.radius),
            np.arange(cfg.train_length, dtype=float),
            trials=cfg.check_trials, seed=cfg.seed, workers=cfg.workers,
        )
        metrics["monte_carlo"] = {
            "trials": check.trials,
            "test_points": check.test_points,
            "violations": check.violations,
            "violation_fraction": check.violation_fraction,
            "seed": check.seed,
        }
    return [write_json(_out(cfg, "bounds.json"), _payload(cfg, "report", reports, metrics))]


def cmd_baseline(cfg: RunConfig) -> list[Path]:
    deltas = _load_deltas(cfg)
    noise = cfg.noise()
    if cfg.protocol == "predict":
        degree = 3 if cfg.poly_degree is None else cfg.poly_degree
        kappa = 3 if cfg.knn_kappa is None else cfg.knn_kappa
        gpr = run_moving_window(deltas, cfg.spec(), cfg.hp_policy(), noise, cfg.level, cfg.freeze_hp, cfg.workers)
        poly = run_baseline_windows(deltas, cfg.spec(), "poly", degree, cfg.level)
        knn = run_baseline_windows(deltas, cfg.spec(), "knn", kappa, cfg.level)
    else:
        degree = 20 if cfg.poly_degree is None else cfg.poly_degree
        kappa = 15 if cfg.knn_kappa is None else cfg.knn_kappa
        gpr = [fit_in_sample(deltas, cfg.hp_policy(), noise, cfg.level)]
        poly = [fit_baseline_in_sample(deltas, "poly", degree, cfg.level)]
        knn = [fit_baseline_in_sample(deltas, "knn", kappa, cfg.level)]
    metrics = [evaluate(rs, mode=cfg.mode) for rs in (gpr, poly, knn)]
    table = compare(metrics[0], metrics[1:])
    rows = [r.to_dict() for r in table]
    payload = _payload(cfg, "table", rows, {m.method: m.to_dict() for m in metrics})
    payload["records"] = [r.to_dict() for rs in (gpr, poly, knn) for r in rs]
    return [
        write_json(_out(cfg, "baseline.json"), payload),
        write_csv(_out(cfg, "baseline.csv"), ["method", "mse", "coverage"],
                  [(r.method, repr(r.mse), repr(r.coverage)) for r in table]),
    ]


def cmd_sensitivity(cfg: RunConfig) -> list[Path]:
    raw = _load_raw(cfg)
    rows = sensitivity_sweep(
        raw, cfg.windows, cfg.lags, cfg.spec(), cfg.noise(), cfg.hp_policy(),
        cfg.level, cfg.mode, cfg.protocol, cfg.freeze_hp,
    )
    body = [r.to_dict() for r in rows]
    ok = [r for r in rows if r.error is None]
    metrics = {"cells": len(rows), "failed": len(rows) - len(ok)}
    header = ["window", "lag", "coverage", "mse", "points", "error"]
    return [
        write_json(_out(cfg, "sensitivity.json"), _payload(cfg, "table", body, metrics)),
        write_csv(_out(cfg, "sensitivity.csv"), header,
                  [[d[h] if not isinstance(d[h], float) else repr(d[h]) for h in header] for d in body]),
    ]


def load_records(path) -> list[ForecastRecord]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"records file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    items = data.get("records", []) if isinstance(data, dict) else data
    return [ForecastRecord.from_dict(d) for d in items]


def cmd_plot(cfg: RunConfig) -> list[Path]:
    if not cfg.records_path:
        raise ConfigError("plot needs a records file (--records)")
    records = load_records(cfg.records_path)
    meta = dumps_json({"config": cfg.to_dict(), "version": __version__})
    svg = records_chart(records, title=Path(cfg.records_path).stem, mode=cfg.mode, metadata=meta)
    return [write_text_atomic(_out(cfg, Path(cfg.records_path).stem + ".svg"), svg)]


HANDLERS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "bounds": cmd_bounds,
    "baseline": cmd_baseline,
    "sensitivity": cmd_sensitivity,
    "plot": cmd_plot,
}


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="epigp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"epigp {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command")

    common = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    a = common.add_argument
    a("--config", dest="config_file", help="flat JSON configuration file")
    a("--input", dest="input_path", default=S, help="CSV with header date,cases")
    a("--fill", choices=["forward"], default=S, help="forward-fill missing calendar days")
    a("--epsilon-floor", type=float, default=S, help="constant added to every case count")
    a("--window", dest="smoothing_window", type=int, default=S, help="trailing smoothing window (days)")
    a("--lag", type=int, default=S, help="log-difference lag (days)")
    a("--noise-variance", type=float, default=S)
    a("--train-length", type=int, default=S)
    a("--horizon", type=int, default=S)
    a("--stride", type=int, default=S)
    a("--signal-variance", type=float, default=S, help="fixed alpha^2 (needs --length-scale)")
    a("--length-scale", type=float, default=S, help="fixed beta in days (needs --signal-variance)")
    a("--signal-variance-min", type=float, default=S)
    a("--signal-variance-max", type=float, default=S)
    a("--signal-variance-points", type=int, default=S)
    a("--length-scale-min", type=float, default=S)
    a("--length-scale-max", type=float, default=S)
    a("--length-scale-points", type=int, default=S)
    a("--freeze-hp", action="store_true", default=S, help="select hyperparameters on the first window only")
    a("--tau", type=float, default=S)
    a("--delta", type=float, default=S)
    a("--lipschitz-target", type=float, default=S)
    a("--empirical-lipschitz", action="store_true", default=S,
      help="heuristic: max consecutive slope of the training deltas")
    a("--interval-length", type=float, default=S)
    a("--radius", type=float, default=S)
    a("--variance-form", choices=VARIANCE_BOUND_FORMS, default=S)
    a("--check-trials", type=int, default=S, help="Monte-Carlo trials validating the error bound")
    a("--level", type=float, default=S)
    a("--mode", choices=["observation", "latent"], default=S)
    a("--protocol", choices=["predict", "fit"], default=S)
    a("--poly-degree", type=int, default=S)
    a("--knn-kappa", type=int, default=S)
    a("--windows", type=_int_list, default=S)
    a("--lags", type=_int_list, default=S)
    a("--records", dest="records_path", default=S)
    a("--output-dir", default=S)
    a("--seed", type=int, default=S)
    a("--workers", type=int, default=S)

    helps = {
        "fit": "in-sample posterior over the whole series",
        "predict": "moving-window forecasts",
        "bounds": "error-bound report per forecast window",
        "baseline": "GPR vs polynomial and KNN comparison table",
        "sensitivity": "sweep over smoothing windows and lags",
        "plot": "render a records JSON file to SVG",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    fetch = sub.add_parser("fetch", help="download the UK series from Our World in Data")
    fetch.add_argument("--dest", required=True)
    fetch.add_argument("--location", default="United Kingdom")
    fetch.add_argument("--start", default="2022-03-01")
    fetch.add_argument("--end", default="2023-02-28")
    fetch.add_argument("--url", default=OWID_URL)
    return p


def resolve_config(ns: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if getattr(ns, "config_file", None):
        try:
            loaded = json.loads(Path(ns.config_file).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {ns.config_file}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a flat JSON object")
        values.update(loaded)
    for key in RunConfig.keys():
        if hasattr(ns, key):
            values[key] = getattr(ns, key)
    return RunConfig.from_mapping(values)


def _error(exc: Exception, code: int) -> int:
    obj = {"error": {"type": type(exc).__name__, "message": str(exc), "exit_code": code}}
    print(json.dumps(obj), file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        if ns.command == "fetch":
            n = fetch_owid(ns.dest, url=ns.url, location=ns.location, start=ns.start, end=ns.end)
            print(json.dumps({"written": ns.dest, "rows": n}))
            return 0
        cfg = resolve_config(ns)
        paths = HANDLERS[ns.command](cfg)
    except EpiGPError as exc:
        return _error(exc, exc.exit_code)
    except OSError as exc:
        return _error(exc, DataError.exit_code)
    print(json.dumps({"written": [str(p) for p in paths]}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
