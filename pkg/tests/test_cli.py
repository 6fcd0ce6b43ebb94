import json
import math

import pytest

from qmicroscopy import fileio
from qmicroscopy.cli import (
    EXIT_USAGE,
    RunConfig,
    build_parser,
    main,
    read_config,
    resolve_config,
    sensitivity_rows,
    write_config,
)
from qmicroscopy.fock import TwinFock, table_params
from qmicroscopy.sampling import CalibrationCurve, RandomSource

FAST = ["--calib-reps", "20", "--calib-points", "101"]


def test_defaults_follow_table():
    cfg = RunConfig(state="tf2")
    assert cfg.imperfections == table_params(TwinFock(2))
    assert cfg.shots_per_pixel == 150


def test_config_round_trip(tmp_path):
    cfg = RunConfig(command="image", state="tf1", offset=0.123456789, n1=3, out=str(tmp_path), determinism=False)
    p = write_config(tmp_path / "config.ini", cfg)
    assert RunConfig(**read_config(p)) == cfg


def test_flags_override_config_file(tmp_path):
    ini = tmp_path / "in.ini"
    ini.write_text("[run]\nseed = 11\nthreads = 2\n[state]\nstate = tf1\n")
    args = build_parser().parse_args(["image", "--config", str(ini), "--seed", "5"])
    cfg = resolve_config(args)
    assert (cfg.seed, cfg.threads, cfg.state, cfg.command) == (5, 2, "tf1", "image")


@pytest.mark.parametrize("text", ["[bogus]\nx = 1\n", "[run]\nnope = 1\n", "[run]\nseed = abc\n"])
def test_bad_config_file(tmp_path, text, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text(text)
    assert main(["calibrate", "--config", str(ini), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        ["image", "--seed", "-1"],
        ["image", "--reps", "0"],
        ["image", "--state", "tf3", "--budget", "500"],
        ["image", "--strategy", "fixed", "--offset", "0.4"],
        ["image", "--strategy", "two-seq", "--n1", "80", "--n2", "80"],
    ],
)
def test_usage_errors_exit_2(tmp_path, argv):
    assert main(argv + FAST + ["--width", "6", "--height", "3", "--out", str(tmp_path)]) == EXIT_USAGE


def test_unknown_state_rejected_by_parser():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["image", "--state", "tf9"])


def test_calibrate_outputs(tmp_path):
    out = tmp_path / "cal"
    assert main(["calibrate", "--state", "tf2", "--out", str(out)] + FAST) == 0
    curve = fileio.read_calibration(out / "calibration.txt")
    assert curve.input == TwinFock(2)
    header, rows = fileio.read_csv(out / "calibration.csv")
    assert header == ["theta", "mean_rate", "std_rate", "fitted"] and len(rows) == 101
    manifest = json.loads((out / "manifest.json").read_text())
    for name, digest in manifest["outputs"].items():
        assert fileio.sha256(out / name) == digest
    assert {"version", "wall_clock_seconds", "started_utc"} <= set(manifest)
    echoed = RunConfig(**read_config(out / "config.ini"))
    assert echoed.state == "tf2" and echoed.calib_points == 101


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("QMICRO_OUT", str(tmp_path / "root"))
    assert main(["calibrate"] + FAST) == 0
    assert (tmp_path / "root" / "calibrate" / "calibration.txt").exists()


def test_calibrate_is_reproducible(tmp_path):
    for d in "ab":
        main(["calibrate", "--seed", "9", "--out", str(tmp_path / d)] + FAST)
    assert (tmp_path / "a" / "calibration.txt").read_text() == (tmp_path / "b" / "calibration.txt").read_text()


def test_sensitivity_rows_have_references_and_sentinels():
    st = TwinFock(1)
    curve = CalibrationCurve.exact(st, table_params(st))
    rows = sensitivity_rows(curve, 50, 20, 3, 10, RandomSource(0))
    kinds = [r[0] for r in rows]
    assert kinds.count("curve") == 21 and kinds.count("mle") == 3
    assert kinds[-2:] == ["shot_noise", "qcrb"]
    first = rows[0]
    assert first[1] == 0 and math.isinf(first[2])
    assert rows[-1][2] == pytest.approx(1 / math.sqrt(4))


def test_sensitivity_command(tmp_path):
    cal = tmp_path / "cal"
    main(["calibrate", "--state", "tf3", "--out", str(cal)] + FAST)
    out = tmp_path / "sens"
    argv = ["sensitivity", "--state", "tf3", "--calibration", str(cal / "calibration.txt"), "--points", "30", "--mle-points", "2", "--reps", "5", "--out", str(out)]
    assert main(argv) == 0
    header, rows = fileio.read_csv(out / "sensitivity.csv")
    assert header == ["kind", "theta", "ideal", "fitted", "mle"]
    assert rows[0][2] == "inf"
    assert main(argv[:2] + ["tf1"] + argv[3:]) == EXIT_USAGE


@pytest.mark.parametrize("strategy", ["fixed", "lock", "two-seq"])
def test_image_command(tmp_path, strategy):
    out = tmp_path / strategy
    argv = ["image", "--state", "tf3", "--strategy", strategy, "--reps", "1", "--width", "12", "--height", "6", "--out", str(out)] + FAST
    assert main(argv) == 0
    names = {p.name for p in out.iterdir()}
    assert {"truth.pgm", "estimate_000.pgm", "metrics.csv", "summary.csv", "metadata.json", "manifest.json", "config.ini"} <= names
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["photons_per_pixel"] == 600 and meta["strategy"] == strategy
    header, rows = fileio.read_csv(out / "metrics.csv")
    assert header == ["image", "lsd", "rmse", "flagged"] and rows[-1][0] == "pooled"


def test_image_p5_sixteen_bit(tmp_path):
    out = tmp_path / "p5"
    argv = ["image", "--state", "tf1", "--reps", "1", "--width", "8", "--height", "4", "--pgm", "P5", "--bit-depth", "16", "--out", str(out)]
    assert main(argv + FAST) == 0
    gray, window = fileio.read_pgm(out / "estimate_000.pgm")
    assert gray.shape == (4, 8) and gray.max() > 255 and window == fileio.GRAY_RANGE


def test_image_independent_of_threads(tmp_path):
    sums = []
    for threads in ("1", "3"):
        out = tmp_path / threads
        argv = ["image", "--strategy", "lock", "--reps", "1", "--width", "10", "--height", "5", "--threads", threads, "--out", str(out)]
        main(argv + FAST)
        sums.append(fileio.sha256(out / "estimate_000.pgm") + fileio.sha256(out / "metrics.csv"))
    assert sums[0] == sums[1]
