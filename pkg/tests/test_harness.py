import json
import os

import numpy as np
import numpy.testing as npt
import pytest

from cbflab.harness import (
    ConfigError,
    MetricSink,
    build_config,
    config_defaults,
    generate_trace_file,
    moving_average,
    parse_config,
    read_bench,
    run_benchmark,
    run_timing,
    run_train,
)

SMALL = {
    "num_cells": "3",
    "users_per_cell": "2",
    "array_rows": "1",
    "array_cols": "4",
    "noise_dbm": "-60",
    "seed": "5",
    "out_dir": "",  # filled per test
    "hidden_sizes": "16,12",
    "memory_capacity": "64",
    "batch_size": "8",
    "num_slots": "14",
    "eval_window": "5",
    "bench_slots": "4",
    "bench_offset": "0",
    "checkpoint_every": "7",
    "num_interferers": "2",
    "codebook_size": "16",
    "wmmse_max_iter": "60",
}


def write_config(tmp_path, name="run.cfg", **overrides):
    values = dict(SMALL)
    values["out_dir"] = str(tmp_path / "out")
    values.update({k: str(v) for k, v in overrides.items()})
    lines = ["# test configuration"]
    lines += [f"{k} = {v}" for k, v in values.items()]
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n")
    return path


# -- config parsing -----------------------------------------------------------


def test_parse_config_power_conversions(tmp_path):
    path = write_config(tmp_path, p_max_dbm=38, noise_dbm=-101)
    cfg = parse_config(path)
    assert cfg.network.max_power == pytest.approx(6.3095734448, rel=1e-9)
    assert cfg.network.noise_power == pytest.approx(7.943282347e-14, rel=1e-9)


def test_parse_config_unknown_key_with_line(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("num_cells = 3\nbogus_key = 1\n")
    with pytest.raises(ConfigError, match=r"bad\.cfg:2.*bogus_key"):
        parse_config(path)


def test_parse_config_missing_mandatory_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("num_cells = 3\n")
    with pytest.raises(ConfigError, match="users_per_cell"):
        parse_config(path)


def test_parse_config_type_error(tmp_path):
    path = write_config(tmp_path, num_slots="many")
    with pytest.raises(ConfigError, match="num_slots"):
        parse_config(path)


def test_parse_config_malformed_line(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("num_cells 3\n")
    with pytest.raises(ConfigError, match="bad.cfg:1"):
        parse_config(path)


def test_parse_config_duplicate_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("num_cells = 3\nnum_cells = 4\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config(path)


def test_config_constraint_checks():
    values = {k: v for k, v in SMALL.items()}
    values["out_dir"] = "x"
    bad = dict(values, num_interferers="5")
    with pytest.raises(ConfigError, match="num_interferers"):
        build_config(bad)
    bad = dict(values, batch_size="128", memory_capacity="64")
    with pytest.raises(ConfigError, match="batch_size"):
        build_config(bad)
    bad = dict(values, schemes="ddcbf,nonsense")
    with pytest.raises(ConfigError, match="nonsense"):
        build_config(bad)


def test_out_dir_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("CBFLAB_OUT_DIR", str(tmp_path / "elsewhere"))
    path = write_config(tmp_path)
    cfg = parse_config(path)
    assert cfg.out_dir == str(tmp_path / "elsewhere")


def test_defaults_documented():
    defaults = config_defaults()
    assert defaults["batch_size"] == 256
    assert defaults["memory_capacity"] == 2000
    assert defaults["discount"] == 0.5
    assert defaults["soft_update_rate"] == 0.01
    assert defaults["noise_sigma_init"] == 0.6
    assert defaults["noise_decay"] == 1e-3
    assert defaults["noise_sigma_min"] == 0.01


def test_moving_average_window():
    series = np.arange(1.0, 8.0)
    ma = moving_average(series, 3)
    assert ma[0] == 1.0
    assert ma[1] == 1.5
    npt.assert_allclose(ma[2:], [2.0, 3.0, 4.0, 5.0, 6.0])


# -- training loop ----------------------------------------------------------------


def test_smoke_train_writes_metrics(tmp_path):
    cfg = parse_config(write_config(tmp_path, num_slots=10))
    summary = run_train(cfg)
    rows = MetricSink.read(summary["metrics_csv"])
    assert len(rows) >= 10
    assert {r["scheme"] for r in rows} == {"train"}
    assert os.path.exists(summary["checkpoint"])
    assert summary["slots"] == 10


def test_train_deterministic_metric_files(tmp_path):
    cfg_a = parse_config(write_config(tmp_path, out_dir=tmp_path / "a"))
    cfg_b = parse_config(write_config(tmp_path, out_dir=tmp_path / "b"))
    run_train(cfg_a)
    run_train(cfg_b)
    a = (tmp_path / "a" / "train.csv").read_bytes()
    b = (tmp_path / "b" / "train.csv").read_bytes()
    assert a == b


def test_train_resume_matches_uninterrupted(tmp_path):
    full_cfg = parse_config(write_config(tmp_path, out_dir=tmp_path / "full"))
    summary = run_train(full_cfg)
    full_csv = (tmp_path / "full" / "train.csv").read_bytes()

    part_cfg = parse_config(write_config(tmp_path, out_dir=tmp_path / "part"))
    run_train(part_cfg)  # writes checkpoints at slots 7 and 14
    ckpt = tmp_path / "part" / "checkpoints" / "train_00000007.npz"
    assert ckpt.exists()
    resumed = run_train(part_cfg, resume_from=str(ckpt))
    part_csv = (tmp_path / "part" / "train.csv").read_bytes()
    assert part_csv == full_csv
    assert resumed["final_moving_average"] == summary["final_moving_average"]


def test_metrics_round_trip_lossless(tmp_path):
    cfg = parse_config(write_config(tmp_path, num_slots=6))
    summary = run_train(cfg)
    rows = MetricSink.read(summary["metrics_csv"])
    # regenerate the CSV from parsed rows and compare byte-for-byte
    src = open(summary["metrics_csv"]).read().splitlines()
    header, cols = src[0], src[1].split(",")
    rebuilt = [src[0], src[1]]
    for row in rows:
        parts = []
        for c in cols:
            v = row[c]
            parts.append(v if isinstance(v, str) else repr(v) if isinstance(v, float) else str(v))
        rebuilt.append(",".join(parts))
    assert rebuilt == src


# -- benchmarks ---------------------------------------------------------------------


def test_benchmark_same_trace_and_determinism(tmp_path):
    cfg = parse_config(write_config(tmp_path))
    out1 = run_benchmark(cfg, schemes=("mslnr-ep",))
    first = open(out1["bench_csv"]).read()
    out2 = run_benchmark(cfg, schemes=("mslnr-ep",))
    assert open(out2["bench_csv"]).read() == first


def test_benchmark_multi_init_dominates(tmp_path):
    cfg = parse_config(write_config(tmp_path, wmmse_num_inits=4, bench_slots=3))
    out = run_benchmark(cfg, schemes=("wmmse", "wmmse-nri"))
    rows = read_bench(out["bench_csv"])
    one = {r["slot"]: r["sum_rate"] for r in rows if r["scheme"] == "wmmse"}
    many = {r["slot"]: r["sum_rate"] for r in rows if r["scheme"] == "wmmse-nri"}
    assert set(one) == set(many)
    for slot, rate in one.items():
        assert many[slot] >= rate - 1e-9


def test_benchmark_requires_checkpoint_for_policies(tmp_path):
    cfg = parse_config(write_config(tmp_path))
    with pytest.raises(ConfigError, match="checkpoint"):
        run_benchmark(cfg, schemes=("ddcbf",))


def test_benchmark_policy_rollout_from_checkpoint(tmp_path):
    cfg = parse_config(write_config(tmp_path, num_slots=12, bench_slots=3))
    summary = run_train(cfg)
    out = run_benchmark(
        cfg, schemes=("ddcbf", "mslnr-ep"), checkpoint=summary["checkpoint"]
    )
    assert set(out["results"]) == {"ddcbf", "mslnr-ep"}
    for stats in out["results"].values():
        assert stats["slots"] == 3
        assert np.isfinite(stats["mean"])
    cdf = open(out["cdf_csv"]).read().splitlines()
    assert cdf[1] == "scheme,sum_rate,cum_prob"
    assert len(cdf) == 2 + 2 * 3


def test_trace_file_pipeline(tmp_path):
    trace_path = tmp_path / "chan.trace"
    cfg = parse_config(write_config(tmp_path, num_slots=9))
    generate_trace_file(cfg, trace_path, num_slots=9)
    cfg2 = parse_config(
        write_config(tmp_path, trace_file=trace_path, num_slots=8, out_dir=tmp_path / "t")
    )
    summary = run_train(cfg2)
    assert summary["slots"] == 8


def test_trace_dimension_mismatch_rejected(tmp_path):
    trace_path = tmp_path / "chan.trace"
    cfg = parse_config(write_config(tmp_path, num_slots=4))
    generate_trace_file(cfg, trace_path, num_slots=4)
    other = parse_config(
        write_config(tmp_path, trace_file=trace_path, array_cols=2, out_dir=tmp_path / "o")
    )
    with pytest.raises(ConfigError, match="dimensions"):
        run_train(other)


# -- timing ---------------------------------------------------------------------------


def test_timing_sanity_ordering(tmp_path):
    cfg = parse_config(write_config(tmp_path, wmmse_max_iter=20))
    report = run_timing(cfg, repeats=5)
    assert report["mrt"]["median_s"] <= report["wmmse"]["median_s"]
    assert report["ddcbf-decision"]["median_s"] < report["wmmse"]["median_s"]
    assert os.path.exists(report["path"])
    saved = json.load(open(report["path"]))
    assert saved["wmmse"]["repeats"] == 5
