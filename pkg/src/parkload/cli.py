"""Command-line pipeline: synthesize, denoise, train, disaggregate, score.

Subcommands share a layered configuration: built-in defaults, then a
``key=value`` file given with ``--config``, then ``PARKLOAD_*`` environment
variables, then explicit flags.  Dotted keys group the settings
(``vmd.alpha``, ``train.learning_rate``); the environment spelling
uppercases the key and joins it with underscores
(``PARKLOAD_TRAIN_LEARNING_RATE``).  Every key is validated before a
subcommand body runs; a bad key or value is a usage error naming it.

Exit codes: 0 success, 1 usage or configuration error, 2 data or
validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from .cnn import InputMatrix
from .data import (
    SAMPLES_PER_DAY,
    DeviceSpec,
    ParkDataset,
    generate_park,
    load_csv,
    write_csv,
)
from .denoise import AUTO_K_RANGE, denoise, select_k
from .errors import (
    DegenerateSignalError,
    InvalidArgumentError,
    NumericFailureError,
    ParseError,
)
from .metrics import DEFAULT_THRESHOLD_FRACTION, evaluate_disaggregation
from .series import TimeSeries, add_noise_at_snr, correlation_coefficient
from .sru import DeviceEstimate, DisaggregationModel, load_model, model_forward, save_model
from .train import TrainConfig, TrainingBatch, finite_difference_check, train
from .vmd import VmdParams

__all__ = ["ENV_PREFIX", "DEVICE_ROSTER", "RunConfig", "run", "main"]

ENV_PREFIX = "PARKLOAD_"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

# synthetic parks draw their devices from the front of this roster
DEVICE_ROSTER = (
    DeviceSpec("press", rated_kw=120.0, duty="continuous",
               interruptions_per_day=1, noise_kw=0.4),
    DeviceSpec("line", rated_kw=80.0, duty="shift",
               on_sample=28, off_sample=76, noise_kw=0.3),
    DeviceSpec("kiln", rated_kw=60.0, duty="cyclic",
               period_samples=8, duty_fraction=0.5, noise_kw=0.3),
    DeviceSpec("pump", rated_kw=50.0, duty="shift",
               on_sample=40, off_sample=88, noise_kw=0.2),
    DeviceSpec("mill", rated_kw=90.0, duty="cyclic",
               period_samples=12, duty_fraction=2 / 3,
               interruptions_per_day=1, noise_kw=0.35),
    DeviceSpec("fans", rated_kw=30.0, duty="continuous", noise_kw=0.15),
)

_SCHEMA = {
    "vmd.alpha": float,
    "vmd.tau": float,
    "vmd.k": int,
    "vmd.tol": float,
    "vmd.max_iters": int,
    "vmd.init_mode": str,
    "vmd.seed": int,
    "select.k_min": int,
    "select.k_max": int,
    "train.learning_rate": float,
    "train.batch_size": int,
    "train.max_iterations": int,
    "train.seed": int,
    "train.optimizer": str,
    "train.ce_weight": float,
    "train.clip_norm": float,
    "train.feature_dim": int,
    "train.hidden": int,
    "train.head_dim": int,
    "train.dropout_rate": float,
    "synth.days": int,
    "synth.devices": int,
    "synth.seed": int,
    "synth.snr_db": float,
    "synth.price_base": float,
    "eval.threshold_fraction": float,
}

_DEFAULTS = {
    "vmd.alpha": 2000.0,
    "vmd.tau": 0.001,
    "vmd.k": 4,
    "vmd.tol": 1e-7,
    "vmd.max_iters": 500,
    "vmd.init_mode": "uniform",
    "vmd.seed": 0,
    "select.k_min": AUTO_K_RANGE[0],
    "select.k_max": AUTO_K_RANGE[1],
    "train.learning_rate": 1e-3,
    "train.batch_size": 16,
    "train.max_iterations": 1000,
    "train.seed": 0,
    "train.optimizer": "adam",
    "train.ce_weight": 0.1,
    "train.clip_norm": 5.0,
    "train.feature_dim": None,
    "train.hidden": None,
    "train.head_dim": None,
    "train.dropout_rate": None,
    "synth.days": 30,
    "synth.devices": 4,
    "synth.seed": 42,
    "synth.snr_db": None,
    "synth.price_base": 1.0,
    "eval.threshold_fraction": DEFAULT_THRESHOLD_FRACTION,
}


class _UsageError(Exception):
    """Bad flags or configuration; reported with exit code 1."""


def _convert(key: str, text: str, origin: str):
    if key not in _SCHEMA:
        raise _UsageError(f"{origin}: unknown config key {key!r}")
    if text.lower() == "none":
        return None
    try:
        return _SCHEMA[key](text)
    except ValueError:
        raise _UsageError(
            f"{origin}: invalid value {text!r} for config key {key!r}") from None


def _parse_config_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise _UsageError(f"config file {path}: {exc.strerror or exc}") from exc
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise _UsageError(f"config file {path} line {lineno}: expected key=value")
        key, _, value = line.partition("=")
        entries[key.strip()] = _convert(
            key.strip(), value.strip(), f"config file {path} line {lineno}")
    return entries


def _env_overrides(environ) -> dict:
    entries = {}
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower().replace("_", ".", 1)
        entries[key] = _convert(key, environ[name], f"environment variable {name}")
    return entries


def _validate_entries(entries: dict) -> None:
    def fail(key, message):
        raise _UsageError(f"config key {key}: {message}")

    for key, value in entries.items():
        if value is None:
            if key in ("synth.snr_db", "train.feature_dim", "train.hidden",
                       "train.head_dim", "train.dropout_rate"):
                continue
            fail(key, "must not be empty")
        group, _, field = key.partition(".")
        if group == "vmd":
            try:
                replace(VmdParams(), **{field: value})
            except InvalidArgumentError as exc:
                fail(key, exc)
        elif group == "train" and field in (
                "learning_rate", "batch_size", "max_iterations",
                "optimizer", "ce_weight", "clip_norm"):
            try:
                replace(TrainConfig(), **{field: value})
            except InvalidArgumentError as exc:
                fail(key, exc)

    for key in ("train.feature_dim", "train.hidden", "train.head_dim"):
        value = entries[key]
        if value is not None and value < 1:
            fail(key, "must be a positive integer")
    rate = entries["train.dropout_rate"]
    if rate is not None and not 0.0 <= rate < 1.0:
        fail("train.dropout_rate", "must lie in [0, 1)")
    if entries["synth.days"] < 1:
        fail("synth.days", "must be at least 1")
    if not 1 <= entries["synth.devices"] <= len(DEVICE_ROSTER):
        fail("synth.devices", f"must lie in [1, {len(DEVICE_ROSTER)}]")
    snr = entries["synth.snr_db"]
    if snr is not None and not np.isfinite(snr):
        fail("synth.snr_db", "must be finite")
    if entries["synth.price_base"] <= 0:
        fail("synth.price_base", "must be positive")
    if not 0.0 < entries["eval.threshold_fraction"] < 1.0:
        fail("eval.threshold_fraction", "must lie in (0, 1)")
    k_min, k_max = entries["select.k_min"], entries["select.k_max"]
    if not 2 <= k_min < k_max <= 16:
        fail("select.k_min/select.k_max", "need 2 <= k_min < k_max <= 16")


@dataclass(frozen=True)
class RunConfig:
    """Fully validated layered settings for one invocation."""

    entries: dict

    def get(self, key: str):
        return self.entries[key]

    def vmd_params(self) -> VmdParams:
        e = self.entries
        return VmdParams(alpha=e["vmd.alpha"], tau=e["vmd.tau"], k=e["vmd.k"],
                         init_mode=e["vmd.init_mode"], tol=e["vmd.tol"],
                         max_iters=e["vmd.max_iters"], seed=e["vmd.seed"])

    def train_config(self) -> TrainConfig:
        e = self.entries
        return TrainConfig(
            learning_rate=e["train.learning_rate"],
            batch_size=e["train.batch_size"],
            max_iterations=e["train.max_iterations"],
            seed=e["train.seed"],
            optimizer=e["train.optimizer"],
            feature_dim=e["train.feature_dim"],
            hidden=e["train.hidden"],
            head_dim=e["train.head_dim"],
            dropout_rate=e["train.dropout_rate"],
            ce_weight=e["train.ce_weight"],
            clip_norm=e["train.clip_norm"],
        )

    def sha256(self) -> str:
        rendered = "".join(f"{k}={self.entries[k]!r}\n" for k in sorted(self.entries))
        return hashlib.sha256(rendered.encode("utf-8")).hexdigest()


def _layer_config(args) -> RunConfig:
    entries = dict(_DEFAULTS)
    if getattr(args, "config", None) is not None:
        entries.update(_parse_config_file(args.config))
    entries.update(_env_overrides(os.environ))
    for dest, key in getattr(args, "flag_keys", {}).items():
        value = getattr(args, dest)
        if value is not None:
            entries[key] = value
    _validate_entries(entries)
    return RunConfig(entries)


# ---------------------------------------------------------------------------
# small shared helpers


def _read_dataset(path: str) -> ParkDataset:
    try:
        return load_csv(path)
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def _read_model(path: str) -> DisaggregationModel:
    try:
        return load_model(path)
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def _write_text(path: str, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc


def _column_series(dataset: ParkDataset, column: str) -> TimeSeries:
    if column == "load_kw":
        return dataset.aggregate
    if column.startswith("dev_") and column.endswith("_kw") and len(column) > 7:
        return dataset.device(column[4:-3])
    raise InvalidArgumentError(
        f"column {column!r} is not a load column (load_kw or dev_<name>_kw)")


def _with_column(dataset: ParkDataset, column: str, values) -> ParkDataset:
    if column == "load_kw":
        return replace(dataset, aggregate=dataset.aggregate.with_values(values))
    name = column[4:-3]
    loads = list(dataset.device_loads)
    loads[dataset.device_names.index(name)] = dataset.device(name).with_values(values)
    return replace(dataset, device_loads=tuple(loads))


def _parse_number_list(text: str, kind, flag: str) -> tuple:
    out = []
    for piece in text.split(","):
        piece = piece.strip()
        try:
            out.append(kind(piece))
        except ValueError:
            raise _UsageError(f"{flag}: cannot parse {piece!r}") from None
    if not out:
        raise _UsageError(f"{flag}: expected a comma-separated list")
    return tuple(out)


def _apply_denoise(signal: TimeSeries, params: VmdParams, auto: bool,
                   k_min: int, k_max: int):
    report = None
    if auto:
        report = select_k(signal, k_min, k_max, params)
        params = replace(params, k=report.selected_k)
    smooth, _ = denoise(signal, params, auto_k=False)
    return smooth, report


# ---------------------------------------------------------------------------
# subcommand bodies (each returns an exit code)


def _cmd_synth(args, config: RunConfig) -> int:
    e = config.entries
    festival = ()
    if args.festival_days is not None:
        festival = _parse_number_list(args.festival_days, int, "--festival-days")
        bad = [d for d in festival if not 0 <= d < e["synth.days"]]
        if bad:
            raise _UsageError(
                f"--festival-days: day {bad[0]} outside 0..{e['synth.days'] - 1}")
    dataset = generate_park(
        DEVICE_ROSTER[: e["synth.devices"]],
        days=e["synth.days"],
        seed=e["synth.seed"],
        measurement_snr_db=e["synth.snr_db"],
        price_base=e["synth.price_base"],
        festival_days=festival,
    )
    write_csv(dataset, args.out)
    print(f"wrote {args.out}: {dataset.days} days, {len(dataset.device_names)} devices")
    return EXIT_OK


def _cmd_denoise(args, config: RunConfig) -> int:
    if args.snr_sweep is None and args.out is None:
        raise _UsageError("denoise: --out is required unless --snr-sweep is given")
    dataset = _read_dataset(args.data)
    series = _column_series(dataset, args.column)
    params = config.vmd_params()
    auto = not args.no_auto_k
    k_min, k_max = config.get("select.k_min"), config.get("select.k_max")

    if args.snr_sweep is not None:
        snrs = _parse_number_list(args.snr_sweep, float, "--snr-sweep")
        rng = np.random.default_rng(args.sweep_seed)
        lines = ["snr_db cc_noisy cc_denoised selected_k"]
        for snr in snrs:
            noisy = add_noise_at_snr(series, snr, seed=int(rng.integers(2**63)))
            smooth, report = _apply_denoise(noisy, params, auto, k_min, k_max)
            cc_noisy = correlation_coefficient(noisy, series)
            cc_smooth = correlation_coefficient(smooth, series)
            k = report.selected_k if report is not None else params.k
            lines.append(f"{snr:g} {cc_noisy:.6f} {cc_smooth:.6f} {k}")
        table = "\n".join(lines) + "\n"
        sys.stdout.write(table)
        if args.out is not None:
            _write_text(args.out, table)
        return EXIT_OK

    smooth, report = _apply_denoise(series, params, auto, k_min, k_max)
    cleaned = _with_column(dataset, args.column, np.maximum(smooth.values, 0.0))
    write_csv(cleaned, args.out)
    if report is not None:
        print(f"selected_k {report.selected_k}")
        if args.report is not None:
            _write_text(args.report, report.to_text())
    print(f"wrote {args.out}: column {args.column} denoised")
    return EXIT_OK


def _cmd_select_k(args, config: RunConfig) -> int:
    dataset = _read_dataset(args.data)
    series = _column_series(dataset, args.column)
    report = select_k(series, config.get("select.k_min"), config.get("select.k_max"),
                      config.vmd_params())
    text = report.to_text()
    sys.stdout.write(text)
    if args.out is not None:
        _write_text(args.out, text)
    return EXIT_OK


def _cmd_train(args, config: RunConfig) -> int:
    dataset = _read_dataset(args.data)
    model, history = train(dataset, config.train_config())
    save_model(model, args.out)
    prefix = args.loss_prefix or os.path.splitext(args.out)[0]
    _write_text(prefix + "_regression.txt", history.to_text("regression"))
    _write_text(prefix + "_classifier.txt", history.to_text("classifier"))
    print(f"wrote {args.out}: {len(model.device_names)} devices, "
          f"{len(history)} iterations")
    return EXIT_OK


def _cmd_disaggregate(args, config: RunConfig) -> int:
    model = _read_model(args.model)
    dataset = _read_dataset(args.data)
    j = model.window_length
    if dataset.n_samples % j != 0:
        raise InvalidArgumentError(
            f"{args.data}: {dataset.n_samples} samples is not a whole number of "
            f"{j}-sample windows")
    pieces = []
    for lo in range(0, dataset.n_samples, j):
        window = InputMatrix(
            price=dataset.price.values[lo:lo + j],
            calendar=dataset.calendar.values[lo:lo + j],
            load=dataset.aggregate.values[lo:lo + j],
        )
        pieces.append(model_forward(window, model).traces)
    traces = np.concatenate(pieces, axis=1)
    estimates = ParkDataset(
        aggregate=dataset.aggregate,
        price=dataset.price,
        calendar=dataset.calendar,
        days=dataset.days,
        device_names=model.device_names,
        device_loads=tuple(dataset.aggregate.with_values(row) for row in traces),
    )
    write_csv(estimates, args.out)
    print(f"wrote {args.out}: {len(model.device_names)} device traces, "
          f"{dataset.n_samples} samples")
    return EXIT_OK


def _cmd_evaluate(args, config: RunConfig) -> int:
    est_ds = _read_dataset(args.estimates)
    truth = _read_dataset(args.truth)
    if not est_ds.device_names:
        raise InvalidArgumentError(f"{args.estimates}: no device columns to score")
    if not truth.device_names:
        raise InvalidArgumentError(f"{args.truth}: no device columns to score against")
    estimates = DeviceEstimate(
        est_ds.device_names,
        np.stack([s.values for s in est_ds.device_loads]),
    )
    report = evaluate_disaggregation(estimates, truth,
                                     config.get("eval.threshold_fraction"))
    text = report.to_text()
    sys.stdout.write(text)
    if args.out is not None:
        _write_text(args.out, text)
    if args.csv is not None:
        _write_text(args.csv, report.to_csv())
    return EXIT_OK


def _cmd_gradcheck(args, config: RunConfig) -> int:
    if args.window < 8 or args.devices < 1 or args.batches < 1 or args.batch_size < 1:
        raise _UsageError("gradcheck: window >= 8 and positive devices/batches/batch-size")
    if not 1e-7 <= abs(args.step) <= 1e-3:
        raise _UsageError("gradcheck: --step must lie in [1e-7, 1e-3]")
    if args.tolerance <= 0:
        raise _UsageError("gradcheck: --tolerance must be positive")
    names = tuple(f"d{i}" for i in range(args.devices))
    model = DisaggregationModel.initialize(
        args.window, names, seed=args.seed,
        feature_dim=args.feature_dim, hidden=args.hidden,
        head_dim=args.head_dim, dropout_rate=0.0)
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.batches):
        windows = rng.random((args.batch_size, 3, args.window))
        windows[:, 1, :] = rng.integers(1, 4, (args.batch_size, args.window))
        batch = TrainingBatch(
            windows=windows,
            targets=rng.random((args.batch_size, args.devices, args.window)),
            labels=rng.integers(0, 4, args.batch_size),
        )
        worst = max(worst, finite_difference_check(model, batch, step=args.step))
    print(f"max_relative_error {worst:.6e}")
    print(f"tolerance {args.tolerance:g}")
    if worst > args.tolerance:
        raise NumericFailureError(
            f"gradient error {worst:.3e} exceeds tolerance {args.tolerance:g}",
            stage="finite-difference")
    print("gradient check passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# plotting


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _svg_chart(curves, title: str, provenance_lines) -> str:
    """Self-contained line chart.  ``curves`` is (label, xs, ys) triples
    where a None y breaks the line; output is byte-stable for equal input.
    """
    width, height = 640, 400
    ml, mr, mt, mb = 60, 20, 34, 42
    plot_w, plot_h = width - ml - mr, height - mt - mb
    points = [(float(x), float(y))
              for _, xs, ys in curves
              for x, y in zip(xs, ys) if y is not None]
    if not points:
        raise InvalidArgumentError("nothing to plot: no defined points")
    x_lo = min(p[0] for p in points)
    x_hi = max(p[0] for p in points)
    y_lo = min(p[1] for p in points)
    y_hi = max(p[1] for p in points)
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    pad = 0.05 * (y_hi - y_lo) if y_hi > y_lo else 0.5
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def sx(x):
        return ml + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y):
        return mt + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h

    out = ['<?xml version="1.0" encoding="UTF-8"?>', "<!--"]
    out.extend(line.replace("--", "- -") for line in provenance_lines)
    out.append("-->")
    out.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
               f'height="{height}" viewBox="0 0 {width} {height}">')
    out.append(f'<rect width="{width}" height="{height}" fill="white"/>')
    out.append(f'<text x="{ml}" y="20" font-family="monospace" font-size="14">'
               f"{title}</text>")
    bottom = mt + plot_h
    out.append(f'<g stroke="#333333" stroke-width="1">'
               f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{bottom}"/>'
               f'<line x1="{ml}" y1="{bottom}" x2="{ml + plot_w}" y2="{bottom}"/></g>')
    out.append(f'<g font-family="monospace" font-size="11" fill="#333333">'
               f'<text x="{ml}" y="{bottom + 16}">{x_lo:.6g}</text>'
               f'<text x="{ml + plot_w - 40}" y="{bottom + 16}">{x_hi:.6g}</text>'
               f'<text x="4" y="{bottom}">{y_lo:.6g}</text>'
               f'<text x="4" y="{mt + 10}">{y_hi:.6g}</text></g>')
    for i, (label, xs, ys) in enumerate(curves):
        color = _COLORS[i % len(_COLORS)]
        segment = []
        segments = []
        for x, y in zip(xs, ys):
            if y is None:
                if segment:
                    segments.append(segment)
                segment = []
            else:
                segment.append(f"{sx(float(x)):.2f},{sy(float(y)):.2f}")
        if segment:
            segments.append(segment)
        for seg in segments:
            if len(seg) == 1:
                cx, cy = seg[0].split(",")
                out.append(f'<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>')
            else:
                out.append(f'<polyline fill="none" stroke="{color}" '
                           f'stroke-width="1.5" points="{" ".join(seg)}"/>')
        ly = mt + 14 + 14 * i
        out.append(f'<line x1="{ml + plot_w - 110}" y1="{ly - 4}" '
                   f'x2="{ml + plot_w - 90}" y2="{ly - 4}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{ml + plot_w - 84}" y="{ly}" font-family="monospace" '
                   f'font-size="11">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _read_loss_file(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    xs, ys = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split()
        if not parts:
            continue
        try:
            xs.append(int(parts[0]))
            ys.append(float(parts[1]))
        except (IndexError, ValueError):
            raise ParseError(f"{path}: expected 'iteration loss'", line=lineno) from None
    if not xs:
        raise ParseError(f"{path}: no loss entries")
    return np.asarray(xs), np.asarray(ys)


def _read_report_csv(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    header = "device,accuracy,precision,recall,f1_half,f1_standard,cc"
    if not lines or lines[0] != header:
        raise ParseError(f"{path}: expected header {header!r}", line=1)
    names, f1s, ccs = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != 7:
            raise ParseError(f"{path}: expected 7 cells", line=lineno)
        if cells[0] == "mean":
            continue
        try:
            names.append(cells[0])
            f1s.append(float(cells[5]) if cells[5] else None)
            ccs.append(float(cells[6]) if cells[6] else None)
        except ValueError:
            raise ParseError(f"{path}: non-numeric cell", line=lineno) from None
    if not names:
        raise ParseError(f"{path}: no device rows")
    return names, f1s, ccs


def _cmd_plot(args, config: RunConfig) -> int:
    try:
        with open(args.data, "rb") as fh:
            source_hash = hashlib.sha256(fh.read()).hexdigest()
    except OSError as exc:
        raise ParseError(f"{args.data}: {exc.strerror or exc}") from exc

    if args.kind == "series":
        dataset = _read_dataset(args.data)
        series = _column_series(dataset, args.column)
        xs = np.arange(series.start_index, series.start_index + len(series))
        curves = [(args.column, xs, [float(v) for v in series.values])]
        rows = [f"{int(x)},{v:.17g}" for x, v in zip(xs, series.values)]
        csv_text = "index," + args.column + "\n" + "\n".join(rows) + "\n"
        title = f"{args.column} over samples"
    elif args.kind == "loss":
        xs, ys = _read_loss_file(args.data)
        curves = [("loss", xs, [float(v) for v in ys])]
        rows = [f"{int(x)},{v:.17g}" for x, v in zip(xs, ys)]
        csv_text = "iteration,loss\n" + "\n".join(rows) + "\n"
        title = "training loss"
    else:
        names, f1s, ccs = _read_report_csv(args.data)
        xs = np.arange(len(names))
        curves = [("f1_standard", xs, f1s), ("cc", xs, ccs)]
        rows = []
        for name, f1, cc in zip(names, f1s, ccs):
            f1_cell = "" if f1 is None else f"{f1:.17g}"
            cc_cell = "" if cc is None else f"{cc:.17g}"
            rows.append(f"{name},{f1_cell},{cc_cell}")
        csv_text = "device,f1_standard,cc\n" + "\n".join(rows) + "\n"
        title = "per-device scores"

    provenance = [
        f"source: {args.data}",
        f"source_sha256: {source_hash}",
        f"seeds: synth={config.get('synth.seed')} vmd={config.get('vmd.seed')} "
        f"train={config.get('train.seed')}",
        f"config_sha256: {config.sha256()}",
    ]
    _write_text(args.out + ".csv", csv_text)
    _write_text(args.out + ".svg", _svg_chart(curves, title, provenance))
    print(f"wrote {args.out}.csv and {args.out}.svg")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser assembly


def _flag_type(key: str):
    kind = _SCHEMA[key]
    return kind if kind is not str else None


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parkload",
        description="Industrial park load pipeline: synthesize, denoise, "
                    "train, disaggregate, and score.")
    subs = parser.add_subparsers(dest="command", required=True, metavar="command")

    def sub(name, body, help_text):
        p = subs.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", metavar="FILE", default=None,
                       help="key=value settings file (dotted keys, e.g. vmd.alpha)")
        flag_keys = {}
        p.set_defaults(func=body, flag_keys=flag_keys)

        def opt(flag, key, help_text=""):
            default = _DEFAULTS[key]
            shown = "unset" if default is None else default
            kwargs = {"default": None, "help": f"{help_text} (default: {shown})"}
            kind = _flag_type(key)
            if kind is not None:
                kwargs["type"] = kind
            action = p.add_argument(flag, **kwargs)
            flag_keys[action.dest] = key

        p.opt = opt
        return p

    def add_vmd_flags(p):
        p.opt("--alpha", "vmd.alpha", "bandwidth penalty")
        p.opt("--tau", "vmd.tau", "dual ascent step")
        p.opt("--k", "vmd.k", "mode count when not auto-selected")
        p.opt("--tol", "vmd.tol", "convergence tolerance")
        p.opt("--max-iters", "vmd.max_iters", "decomposition iteration cap")
        p.opt("--init-mode", "vmd.init_mode", "center init: zero, uniform, random")
        p.opt("--vmd-seed", "vmd.seed", "seed for random center init")
        p.opt("--k-min", "select.k_min", "smallest candidate mode count")
        p.opt("--k-max", "select.k_max", "largest candidate mode count")

    p = sub("synth", _cmd_synth, "generate a synthetic park CSV with ground truth")
    p.opt("--days", "synth.days", "days to simulate")
    p.opt("--devices", "synth.devices",
          f"devices from the built-in roster, up to {len(DEVICE_ROSTER)}")
    p.opt("--seed", "synth.seed", "generator seed")
    p.opt("--snr-db", "synth.snr_db", "measurement noise level on the aggregate")
    p.opt("--price-base", "synth.price_base", "tariff scale")
    p.add_argument("--festival-days", default=None, metavar="D1,D2",
                   help="zero-based day indices marked as festivals")
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub("denoise", _cmd_denoise,
            "decompose a load column and drop weakly correlated modes")
    p.add_argument("--data", required=True, help="park CSV to read")
    p.add_argument("--out", default=None, help="denoised CSV (or sweep table) path")
    p.add_argument("--column", default="load_kw",
                   help="load column to denoise (default: load_kw)")
    p.add_argument("--no-auto-k", action="store_true",
                   help="use --k directly instead of the elbow selection")
    p.add_argument("--report", default=None, metavar="FILE",
                   help="write the mode-count selection report here")
    p.add_argument("--snr-sweep", default=None, metavar="DB1,DB2",
                   help="add noise at each SNR and print a fidelity table")
    p.add_argument("--sweep-seed", type=int, default=0,
                   help="seed for sweep noise draws (default: 0)")
    add_vmd_flags(p)

    p = sub("select-k", _cmd_select_k, "report the mode-count sweep for a load column")
    p.add_argument("--data", required=True, help="park CSV to read")
    p.add_argument("--column", default="load_kw",
                   help="load column to analyze (default: load_kw)")
    p.add_argument("--out", default=None, help="also write the report here")
    add_vmd_flags(p)

    p = sub("train", _cmd_train, "fit a disaggregation model to a park CSV")
    p.add_argument("--data", required=True, help="park CSV with device columns")
    p.add_argument("--out", required=True, help="model file path")
    p.add_argument("--loss-prefix", default=None,
                   help="loss file prefix (default: model path stem)")
    p.opt("--learning-rate", "train.learning_rate", "optimizer step size")
    p.opt("--batch-size", "train.batch_size", "windows per iteration")
    p.opt("--max-iterations", "train.max_iterations", "iteration count")
    p.opt("--seed", "train.seed", "init and sampling seed")
    p.opt("--optimizer", "train.optimizer", "adam or sgd")
    p.opt("--ce-weight", "train.ce_weight", "classifier loss weight")
    p.opt("--clip-norm", "train.clip_norm", "global gradient norm bound")
    p.opt("--feature-dim", "train.feature_dim", "feature vector width")
    p.opt("--hidden", "train.hidden", "recurrent state width")
    p.opt("--head-dim", "train.head_dim", "output head width")
    p.opt("--dropout-rate", "train.dropout_rate", "feature dropout rate")

    p = sub("disaggregate", _cmd_disaggregate,
            "apply a trained model and write per-device estimates")
    p.add_argument("--model", required=True, help="model file from train")
    p.add_argument("--data", required=True, help="park CSV to disaggregate")
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub("evaluate", _cmd_evaluate, "score estimated traces against ground truth")
    p.add_argument("--estimates", required=True, help="CSV from disaggregate")
    p.add_argument("--truth", required=True, help="CSV with true device columns")
    p.opt("--threshold-fraction", "eval.threshold_fraction",
          "on/off cut as a fraction of each device's true peak")
    p.add_argument("--out", default=None, help="also write the text report here")
    p.add_argument("--csv", default=None, help="also write the report as CSV")

    p = sub("gradcheck", _cmd_gradcheck,
            "compare analytic gradients against finite differences")
    p.add_argument("--window", type=int, default=16, help="window length (default: 16)")
    p.add_argument("--devices", type=int, default=2, help="device count (default: 2)")
    p.add_argument("--feature-dim", type=int, default=8,
                   help="feature vector width (default: 8)")
    p.add_argument("--hidden", type=int, default=8,
                   help="recurrent state width (default: 8)")
    p.add_argument("--head-dim", type=int, default=8,
                   help="output head width (default: 8)")
    p.add_argument("--batches", type=int, default=5,
                   help="random batches to check (default: 5)")
    p.add_argument("--batch-size", type=int, default=2,
                   help="windows per batch (default: 2)")
    p.add_argument("--step", type=float, default=1e-5,
                   help="finite difference step (default: 1e-5)")
    p.add_argument("--seed", type=int, default=0, help="model and data seed (default: 0)")
    p.add_argument("--tolerance", type=float, default=1e-4,
                   help="max relative error allowed (default: 1e-4)")

    p = sub("plot", _cmd_plot,
            "emit a line chart as CSV plus a self-contained SVG")
    p.add_argument("--data", required=True,
                   help="input file: park CSV, loss text, or report CSV")
    p.add_argument("--kind", required=True, choices=("series", "loss", "report"),
                   help="how to interpret the input")
    p.add_argument("--column", default="load_kw",
                   help="column for --kind series (default: load_kw)")
    p.add_argument("--out", required=True,
                   help="output prefix; writes <out>.csv and <out>.svg")

    return parser


def run(argv=None) -> int:
    """Parse ``argv`` and execute one subcommand; returns the exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if exc.code is not None else 0
        return EXIT_OK if code == 0 else EXIT_USAGE
    try:
        config = _layer_config(args)
        return args.func(args, config)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, InvalidArgumentError, DegenerateSignalError) as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericFailureError as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())
