"""Artifact writers: canonical JSON, CSV fidelity, binary field round-trips."""

import json
import os

import numpy as np
import pytest

from suspvisc.artifacts import (
    atomic_write_text,
    config_artifact,
    load_json,
    write_csv,
    write_field,
    write_json,
    write_solver_log,
)
from suspvisc.ensembles import ParticleConfig


def test_json_is_insertion_order_independent(tmp_path):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    write_json(a, {"x": 1, "y": [2.0, 3], "z": {"k": True}})
    write_json(b, {"z": {"k": True}, "y": [2.0, 3], "x": 1})
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes().endswith(b"\n")


def test_json_handles_numpy_scalars_and_arrays(tmp_path):
    p = tmp_path / "np.json"
    write_json(p, {"a": np.float64(0.5), "b": np.arange(3), "c": np.bool_(True)})
    back = load_json(p)
    assert back == {"a": 0.5, "b": [0, 1, 2], "c": True}


def test_atomic_write_replaces_and_leaves_no_temp(tmp_path):
    p = tmp_path / "f.txt"
    atomic_write_text(p, "one")
    atomic_write_text(p, "two")
    assert p.read_text() == "two"
    leftovers = [n for n in os.listdir(tmp_path) if n.startswith(".tmp")]
    assert leftovers == []


def test_csv_floats_round_trip_exactly(tmp_path):
    p = tmp_path / "t.csv"
    vals = [1.0 / 3.0, 1e-17, 2.5, np.float64(np.pi)]
    write_csv(p, ["v"], [[v] for v in vals])
    lines = p.read_text().splitlines()
    assert lines[0] == "v"
    assert [float(s) for s in lines[1:]] == [float(v) for v in vals]


def test_solver_log_layout(tmp_path):
    p = tmp_path / "log.csv"
    write_solver_log(p, [0.5, 0.25, 0.125])
    lines = p.read_text().splitlines()
    assert lines[0] == "iteration,residual"
    assert lines[1].startswith("0,") and lines[3].startswith("2,")


def test_field_sidecar_and_binary_round_trip(tmp_path, solved2d):
    base = tmp_path / "field"
    write_field(base, solved2d)
    side = load_json(str(base) + ".json")
    assert side["dtype"] == "f64"
    assert side["order"] == "row-major"
    assert side["components"] == 2
    assert side["dims"] == [solved2d.n, solved2d.n]
    assert side["box"] == solved2d.L
    raw = np.frombuffer((tmp_path / "field.bin").read_bytes(), dtype=np.float64)
    raw = raw.reshape([side["components"]] + side["dims"])
    assert np.array_equal(raw, solved2d.velocity())


def test_config_artifact_schema():
    cfg = ParticleConfig(d=2, L=8.0, centers=np.array([[1.0, 2.0]]), gap=0.5, seed=3)
    art = config_artifact(cfg)
    assert set(art) == {"dim", "box", "gap", "seed", "centers"}
    assert art["centers"] == [[1.0, 2.0]]
    json.dumps(art)  # fully serializable without custom encoders
