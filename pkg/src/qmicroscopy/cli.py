"""Command-line entry point: ``qmicro {calibrate,sensitivity,image,reproduce-all}``.

Settings resolve as built-in defaults, then an INI file (``--config``), then
command-line flags.  Every run writes the effective settings back as
``config.ini`` next to its outputs, plus a ``manifest.json`` with checksums.
"""

from __future__ import annotations

import argparse
import configparser
import math
import os
import shutil
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, fields, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, checks, fileio
from .errors import (
    BootstrapError,
    CalibrationError,
    ConfigurationError,
    DegeneratePosteriorError,
    DomainError,
    MonotonicityError,
    SingularPointError,
)
from .estimators import PriorInterval, mle_single, optimal_working_point, sensitivity_curve
from .fock import ImperfectionParams, ProbabilityModel, SinglePhoton, parse_state, quantum_crb, shot_noise_limit, table_params
from .microscopy import (
    FIELD_FLOOR,
    FixedOffset,
    PhaseLock,
    ScanConfig,
    TwoSequence,
    build_phase_field,
    local_standard_deviation,
    optimal_region,
    rmse,
    scan,
    shots_for_budget,
)
from .sampling import MeasurementRecord, RandomSource, default_grid, fit_curve, measure_rates, simulate_batch

COMMANDS = ("calibrate", "sensitivity", "image", "reproduce-all")
STATES = ("single", "tf1", "tf2", "tf3")
STRATEGIES = ("fixed", "lock", "two-seq")
ENV_OUT = "QMICRO_OUT"

EXIT_OK, EXIT_FAILED_CHECKS, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


@dataclass(frozen=True)
class RunConfig:
    """Effective settings of one command; ``None`` means "derive a default"."""

    command: str = "image"
    seed: int = 2024
    threads: int = 1
    out: str | None = None
    state: str = "tf3"
    visibility: float | None = None
    peak_height: float | None = None
    calib_shots: int = 100
    calib_reps: int = 20
    calib_points: int = 201
    calibration: str | None = None
    strategy: str = "fixed"
    budget: int = 600
    shots: int | None = None
    reps: int = 20
    offset: float | None = None
    n1: int | None = None
    n2: int | None = None
    width: int = 60
    height: int = 30
    sens_points: int = 400
    mle_points: int = 20
    pgm: str = "P2"
    bit_depth: int = 8
    scale: str = "full"
    determinism: bool = True

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigurationError(f"unknown command {self.command!r}")
        if self.state not in STATES:
            raise ConfigurationError(f"state must be one of {STATES}")
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"strategy must be one of {STRATEGIES}")
        if self.pgm not in ("P2", "P5"):
            raise ConfigurationError("pgm must be P2 or P5")
        if self.bit_depth not in (8, 16):
            raise ConfigurationError("bit_depth must be 8 or 16")
        if self.scale not in ("full", "reduced"):
            raise ConfigurationError("scale must be full or reduced")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        for name in ("threads", "calib_shots", "calib_reps", "budget", "reps", "width", "height", "sens_points", "mle_points"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.calib_points < 3:
            raise ConfigurationError("calib_points must be >= 3")
        if self.shots is not None and self.shots < 1:
            raise ConfigurationError("shots must be >= 1")
        return self

    @property
    def input_state(self):
        return parse_state(self.state)

    @property
    def imperfections(self) -> ImperfectionParams:
        base = table_params(self.input_state)
        return ImperfectionParams(
            self.visibility if self.visibility is not None else base.visibility,
            self.peak_height if self.peak_height is not None else base.height,
        )

    @property
    def shots_per_pixel(self) -> int:
        return self.shots if self.shots is not None else shots_for_budget(self.input_state.photons, self.budget)

    def out_dir(self) -> Path:
        if self.out:
            return Path(self.out)
        return Path(os.environ.get(ENV_OUT, "runs")) / self.command


# INI section of each field; keys inside a section are the field names
SECTIONS = {
    "run": ("command", "seed", "threads", "out"),
    "state": ("state", "visibility", "peak_height"),
    "calibration": ("calib_shots", "calib_reps", "calib_points", "calibration"),
    "scan": ("strategy", "budget", "shots", "reps", "offset", "n1", "n2", "width", "height"),
    "sensitivity": ("sens_points", "mle_points"),
    "output": ("pgm", "bit_depth"),
    "reproduce": ("scale", "determinism"),
}
_INT = {"seed", "threads", "calib_shots", "calib_reps", "calib_points", "budget", "shots", "reps", "n1", "n2", "width", "height", "sens_points", "mle_points", "bit_depth"}
_FLOAT = {"visibility", "peak_height", "offset"}
_BOOL = {"determinism"}


def _convert(name: str, text: str):
    text = text.strip()
    if text.lower() in ("", "none"):
        return None
    try:
        if name in _INT:
            return int(text)
        if name in _FLOAT:
            return float(text)
        if name in _BOOL:
            return configparser.ConfigParser.BOOLEAN_STATES[text.lower()]
    except (ValueError, KeyError):
        raise ConfigurationError(f"cannot parse {name} = {text!r}") from None
    return text


def read_config(path) -> dict:
    parser = configparser.ConfigParser()
    if not parser.read(path, encoding="utf-8"):
        raise ConfigurationError(f"cannot read config file {path}")
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigurationError(f"unknown config section [{section}]")
        for key, text in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigurationError(f"unknown key {key!r} in [{section}]")
            values[key] = _convert(key, text)
    return values


def write_config(path, config: RunConfig):
    parser = configparser.ConfigParser()
    data = asdict(config)
    for section, keys in SECTIONS.items():
        parser[section] = {k: "none" if data[k] is None else (fileio.fmt(data[k]) if isinstance(data[k], float) else str(data[k])) for k in keys}
    with Path(path).open("w", encoding="utf-8") as fh:
        parser.write(fh)
    return Path(path)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    common.add_argument("--config", help="INI file with settings; flags override it")
    common.add_argument("--seed", type=int, default=S, help="64-bit master seed")
    common.add_argument("--out", default=S, help=f"output directory (default ${ENV_OUT}/<command> or runs/<command>)")
    common.add_argument("--threads", type=int, default=S, help="worker threads; results do not depend on it")
    common.add_argument("--state", choices=STATES, default=S)
    common.add_argument("--visibility", type=float, default=S, help="override the tabulated visibility")
    common.add_argument("--peak-height", dest="peak_height", type=float, default=S)
    common.add_argument("--calib-shots", dest="calib_shots", type=int, default=S, help="probes per calibration record")
    common.add_argument("--calib-reps", dest="calib_reps", type=int, default=S, help="records per calibration point")
    common.add_argument("--calib-points", dest="calib_points", type=int, default=S)
    common.add_argument("--calibration", default=S, help="reuse a calibration record instead of calibrating")
    common.add_argument("--reps", type=int, default=S, help="repetitions (images or Monte Carlo draws)")

    parser = argparse.ArgumentParser(prog="qmicro", description="Twin-Fock birefringence microscopy simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("calibrate", parents=[common], help="simulate a calibration run and fit the signal curve")
    sens = sub.add_parser("sensitivity", parents=[common], help="per-probe phase sensitivity across the branch")
    sens.add_argument("--points", dest="sens_points", type=int, default=S)
    sens.add_argument("--mle-points", dest="mle_points", type=int, default=S)
    sens.add_argument("--shots", type=int, default=S, help="probes per Monte Carlo MLE record")
    img = sub.add_parser("image", parents=[common], help="scan the synthetic phase field")
    img.add_argument("--strategy", choices=STRATEGIES, default=S)
    img.add_argument("--shots", type=int, default=S, help="probes per pixel (default budget / N)")
    img.add_argument("--budget", type=int, default=S, help="photons per pixel")
    img.add_argument("--offset", type=float, default=S, help="fixed or second-sequence offset (rad)")
    img.add_argument("--n1", type=int, default=S)
    img.add_argument("--n2", type=int, default=S)
    img.add_argument("--width", type=int, default=S)
    img.add_argument("--height", type=int, default=S)
    img.add_argument("--pgm", choices=("P2", "P5"), default=S)
    img.add_argument("--bit-depth", dest="bit_depth", type=int, choices=(8, 16), default=S)
    rep = sub.add_parser("reproduce-all", parents=[common], help="regenerate every result and the acceptance summary")
    rep.add_argument("--scale", choices=("full", "reduced"), default=S)
    rep.add_argument("--no-determinism", dest="determinism", action="store_false", default=S)
    rep.add_argument("--strict", action="store_true", help="exit 1 if any acceptance check fails")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(read_config(args.config))
    names = {f.name for f in fields(RunConfig)}
    values.update({k: v for k, v in vars(args).items() if k in names})
    return RunConfig(**values).validate()


def _load_or_calibrate(config: RunConfig, source: RandomSource):
    if config.calibration:
        curve = fileio.read_calibration(config.calibration)
        if curve.input != config.input_state:
            raise ConfigurationError(f"calibration record is for {curve.input.label}, not {config.state}")
        return curve, None
    model = ProbabilityModel(config.input_state, config.imperfections)
    data = measure_rates(model, default_grid(config.calib_points), config.calib_shots, config.calib_reps, source)
    return fit_curve(config.input_state, data), data


class _Run:
    """Output directory bookkeeping shared by all commands."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.dir = config.out_dir()
        self.dir.mkdir(parents=True, exist_ok=True)
        self.outputs: list[Path] = []
        self.start = time.perf_counter()
        self.started = datetime.now(timezone.utc).isoformat(timespec="seconds")

    def add(self, path: Path) -> Path:
        self.outputs.append(Path(path))
        return Path(path)

    def path(self, name: str) -> Path:
        return self.dir / name

    def finish(self, extra: dict | None = None) -> dict:
        self.add(write_config(self.path("config.ini"), self.config))
        manifest = {
            "package": "qmicroscopy",
            "version": __version__,
            "command": self.config.command,
            "started_utc": self.started,
            "wall_clock_seconds": round(time.perf_counter() - self.start, 3),
            "outputs": {p.name: fileio.sha256(p) for p in sorted(self.outputs)},
        }
        manifest.update(extra or {})
        fileio.write_json(self.path("manifest.json"), manifest)
        return manifest


def cmd_calibrate(config: RunConfig) -> int:
    run = _Run(config)
    model = ProbabilityModel(config.input_state, config.imperfections)
    data = measure_rates(model, default_grid(config.calib_points), config.calib_shots, config.calib_reps, RandomSource(config.seed))
    curve = fit_curve(config.input_state, data)
    run.add(
        fileio.write_calibration(
            run.path("calibration.txt"),
            curve,
            {"visibility": config.imperfections.visibility, "peak_height": config.imperfections.height,
             "trials": config.calib_shots, "repetitions": config.calib_reps, "seed": str(config.seed)},
        )
    )
    rows = zip(data.theta, data.mean_rate, data.std_rate, curve.prob(data.theta))
    run.add(fileio.write_csv(run.path("calibration.csv"), ["theta", "mean_rate", "std_rate", "fitted"], rows))
    run.finish()
    print(f"{curve.input.label}: scale={curve.scale:.5f}+-{curve.scale_se:.5f} offset={curve.offset:.5f}+-{curve.offset_se:.5f}")
    print(f"wrote {run.dir}")
    return EXIT_OK


def sensitivity_rows(curve, shots: int, points: int, mle_points: int, reps: int, source: RandomSource):
    """Rows ``(kind, theta, ideal, fitted, mle)`` of per-probe sensitivities.

    ``mle`` is ``sqrt(shots)`` times the spread of Monte Carlo MLE estimates;
    ``inf`` marks singular points.
    """
    ideal = ProbabilityModel(curve.input)
    theta = curve.theta_dark * np.arange(0, points + 1) / points
    ideal_s = sensitivity_curve(ideal, theta)
    fitted_s = sensitivity_curve(curve, theta)
    rows = [("curve", t, a, b, math.nan) for t, a, b in zip(theta, ideal_s, fitted_s)]
    prior = PriorInterval.default(curve)
    for k in range(1, mle_points + 1):
        t = curve.theta_dark * k / (mle_points + 1)
        counts = simulate_batch(float(curve.prob(t)), shots, reps, source.child(k))
        est = []
        for c in counts:
            try:
                est.append(mle_single(curve, MeasurementRecord(shots, int(c)), prior).value)
            except DegeneratePosteriorError:
                continue
        spread = float(np.std(est, ddof=1)) * math.sqrt(shots) if len(est) > 1 else math.nan
        rows.append(("mle", t, float(sensitivity_curve(ideal, [t])[0]), float(sensitivity_curve(curve, [t])[0]), spread))
    n = curve.input.photons
    rows.append(("shot_noise", math.nan, shot_noise_limit(n), shot_noise_limit(n), math.nan))
    if not isinstance(curve.input, SinglePhoton):
        rows.append(("qcrb", math.nan, quantum_crb(n), quantum_crb(n), math.nan))
    return rows


def cmd_sensitivity(config: RunConfig) -> int:
    run = _Run(config)
    root = RandomSource(config.seed)
    curve, _ = _load_or_calibrate(config, root.child(0))
    shots = config.shots if config.shots is not None else 100
    rows = sensitivity_rows(curve, shots, config.sens_points, config.mle_points, config.reps, root.child(1))
    run.add(fileio.write_csv(run.path("sensitivity.csv"), ["kind", "theta", "ideal", "fitted", "mle"], rows))
    theta_min = optimal_working_point(curve)
    run.finish({"theta_min": theta_min, "theta_dark": curve.theta_dark})
    print(f"{curve.input.label}: theta_min={theta_min:.5f} theta_dark={curve.theta_dark:.5f}")
    print(f"wrote {run.dir}")
    return EXIT_OK


def _strategy(config: RunConfig, shots: int):
    if config.strategy == "fixed":
        return FixedOffset(config.offset)
    if config.strategy == "lock":
        return PhaseLock()
    n1 = config.n1 if config.n1 is not None else (shots - config.n2 if config.n2 is not None else shots // 2)
    n2 = config.n2 if config.n2 is not None else shots - n1
    return TwoSequence(n1, n2, config.offset)


def _reference_lsd(config: RunConfig, field, region, root: RandomSource) -> float:
    """LSD of single-photon fixed-offset images at the same photon budget."""
    state = SinglePhoton()
    model = ProbabilityModel(state, table_params(state))
    curve = fit_curve(state, measure_rates(model, default_grid(config.calib_points), config.calib_shots, config.calib_reps, root.child(0)))
    cfg = ScanConfig(curve, FixedOffset(), config.budget, config.seed, config.threads)
    imgs = [scan(field, cfg, root.child(1, r)) for r in range(config.reps)]
    return local_standard_deviation(imgs, region)


def cmd_image(config: RunConfig) -> int:
    run = _Run(config)
    root = RandomSource(config.seed)
    curve, _ = _load_or_calibrate(config, root.child(0))
    field = build_phase_field(config.width, config.height)
    shots = config.shots_per_pixel
    cfg = ScanConfig(curve, _strategy(config, shots), shots, config.seed, config.threads)
    images = [scan(field, cfg, root.child(1, r)) for r in range(config.reps)]
    theta_min = optimal_working_point(curve)
    region = optimal_region(theta_min - FIELD_FLOOR + field.values, theta_min)
    lsd = local_standard_deviation(images, region)
    ratio = math.nan
    if not isinstance(config.input_state, SinglePhoton) and config.shots is None:
        ratio = _reference_lsd(config, field, region, root.child(2)) / lsd
    binary, maxval = config.pgm == "P5", 255 if config.bit_depth == 8 else 65535
    run.add(fileio.write_pgm(run.path("truth.pgm"), field.values, maxval=maxval, binary=binary))
    rows = []
    for r, img in enumerate(images):
        run.add(fileio.write_pgm(run.path(f"estimate_{r:03d}.pgm"), img.estimate, maxval=maxval, binary=binary))
        rows.append((str(r), local_standard_deviation(img, region), rmse(img, field), img.flagged))
    rows.append(("pooled", lsd, float(np.mean([row[2] for row in rows])), sum(row[3] for row in rows)))
    run.add(fileio.write_csv(run.path("metrics.csv"), ["image", "lsd", "rmse", "flagged"], rows))
    run.add(fileio.write_csv(run.path("summary.csv"), ["metric", "value"], [("lsd", lsd), ("ratio_vs_single", ratio), ("region_pixels", int(region.sum()))]))
    meta = {
        "state": curve.input.label,
        "strategy": config.strategy,
        "shots_per_pixel": shots,
        "photons_per_pixel": cfg.photons_per_pixel,
        "theta_min": theta_min,
        "theta_dark": curve.theta_dark,
        "calibration": {"scale": curve.scale, "offset": curve.offset},
        "field": field.mapping(),
        "gray_window_rad": list(fileio.GRAY_RANGE),
        "scan": [{k: v for k, v in img.meta.items()} for img in images],
        "flagged_pixels": [[list(map(int, p)) for p in img.flagged_pixels()] for img in images],
    }
    run.add(fileio.write_json(run.path("metadata.json"), meta))
    run.finish()
    print(f"{curve.input.label}/{config.strategy}: LSD={lsd:.5f} ratio={ratio:.3f} flagged={rows[-1][3]}")
    print(f"wrote {run.dir}")
    return EXIT_OK


def reproduce_settings(config: RunConfig) -> checks.AcceptanceSettings:
    if config.scale == "reduced":
        return checks.AcceptanceSettings(
            seed=config.seed, reps=2, width=12, height=6, two_seq_points=3,
            calib_reps=5, converged_reps=50, workers=config.threads,
        )
    return checks.AcceptanceSettings(seed=config.seed, reps=config.reps, width=config.width, height=config.height, workers=config.threads)


def write_summary(path, results):
    rows = [(str(r.number), r.name, str(r.passed), r.value, r.tolerance) for r in results]
    return fileio.write_csv(path, ["criterion", "name", "passed", "value", "tolerance"], rows)


def reproduce(config: RunConfig, out: Path) -> tuple[list, dict]:
    """Run the acceptance matrix and write every table and image into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    run = checks.AcceptanceRun(reproduce_settings(config))
    results = checks.run_checks(run)
    written = []
    for st in checks.STATES:
        written.append(fileio.write_calibration(out / f"calibration_{st.label}.txt", run.curves[st.photons]))
        imgs, _ = run.fixed_images(st.photons)
        written.append(fileio.write_pgm(out / f"fixed_{st.label}.pgm", imgs[0].estimate))
    written.append(fileio.write_pgm(out / "truth.pgm", run.field.values))
    written.append(fileio.write_pgm(out / "lock_tf3.pgm", run.lock_images[0][0].estimate))
    sens = []
    for st in checks.STATES:
        curve = run.curves[st.photons]
        theta = curve.theta_dark * np.arange(0, 201) / 200
        for t, a, b in zip(theta, sensitivity_curve(ProbabilityModel(st), theta), sensitivity_curve(curve, theta)):
            sens.append((st.label, t, a, b))
    written.append(fileio.write_csv(out / "sensitivity.csv", ["state", "theta", "ideal", "fitted"], sens))
    sweep = []
    for label, rows in results[9].details["sweep"].items():
        sweep.extend((label, r["phi"], r["mean"], r["se"], r["sqrtN_sigma"], r["sqrtN_bound"]) for r in rows)
    written.append(fileio.write_csv(out / "two_sequence.csv", ["state", "phi", "mean", "se", "sqrtN_sigma", "sqrtN_bound"], sweep))
    written.append(write_summary(out / "summary.csv", results))
    return results, {p.name: fileio.sha256(p) for p in written}


def determinism_check(config: RunConfig) -> checks.CheckResult:
    """Reduced-scale reproduction twice, single- and multi-threaded; checksums must agree."""
    tmp = Path(tempfile.mkdtemp(prefix="qmicro-det-"))
    try:
        reduced = replace(config, scale="reduced")
        _, a = reproduce(replace(reduced, threads=1), tmp / "a")
        _, b = reproduce(replace(reduced, threads=max(4, config.threads)), tmp / "b")
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    same = a == b
    differing = sorted(k for k in a if a.get(k) != b.get(k))
    return checks.CheckResult(
        11, "determinism", same,
        f"{len(a)} outputs, {len(differing)} differ between 1 and {max(4, config.threads)} threads",
        "identical checksums", details={"differing": differing},
    )


def cmd_reproduce(config: RunConfig, strict: bool = False) -> int:
    run = _Run(config)
    results, sums = reproduce(config, run.dir)
    for name in sums:
        run.add(run.path(name))
    if config.determinism:
        results.append(determinism_check(config))
        write_summary(run.path("summary.csv"), results)
    timing = {f"criterion_{r.number}": {"seconds": round(r.seconds, 3), "runtime_ok": r.runtime_ok} for r in results}
    run.finish({"timing": timing})
    for r in results:
        print(r.line())
    print(f"wrote {run.dir}")
    failed = [r for r in results if not (r.passed and r.runtime_ok)]
    return EXIT_FAILED_CHECKS if strict and failed else EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args)
        if config.command == "calibrate":
            return cmd_calibrate(config)
        if config.command == "sensitivity":
            return cmd_sensitivity(config)
        if config.command == "image":
            return cmd_image(config)
        return cmd_reproduce(config, getattr(args, "strict", False))
    except (ConfigurationError, DomainError, MonotonicityError) as exc:
        print(f"qmicro: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CalibrationError, BootstrapError, SingularPointError, DegeneratePosteriorError, OSError) as exc:
        print(f"qmicro: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
