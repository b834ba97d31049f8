import json
from dataclasses import dataclass
from pathlib import Path

from src.channel_sim import ChannelMode
from src.manifest import RunManifest


@dataclass(frozen=True)
class _Knobs:
    mode: ChannelMode
    out: Path


def test_default_location_and_infinities(tmp_path):
    manifest = RunManifest(command="ber", argv=["ber"], config={"snr": [float("inf"), 30.0]})
    manifest.seeds["grid"] = 42
    manifest.finish(0)
    path = manifest.write(out_dir=str(tmp_path))
    assert path.parent == tmp_path / "manifests"
    assert path.name.startswith("ber-")
    data = json.loads(path.read_text())
    assert data["config"]["snr"] == ["inf", 30.0]
    assert data["seeds"] == {"grid": 42}
    assert data["exit_code"] == 0
    assert data["finished_at"] >= data["started_at"]


def test_nested_values_are_flattened(tmp_path):
    knobs = _Knobs(ChannelMode.DISTANCE, Path("outputs/x.wav"))
    manifest = RunManifest(command="transmit", argv=[], config={"knobs": knobs, "ratio": float("nan")})
    manifest.finish(2)
    path = manifest.write(tmp_path / "deep" / "run.json")
    data = json.loads(path.read_text())
    assert data["config"]["knobs"] == {"mode": ChannelMode.DISTANCE.value, "out": str(Path("outputs/x.wav"))}
    assert data["config"]["ratio"] is None
    assert data["exit_code"] == 2


def test_unfinished_run_has_no_exit_code(tmp_path):
    path = RunManifest(command="sweep", argv=["sweep"], config={}).write(tmp_path / "run.json")
    data = json.loads(path.read_text())
    assert data["exit_code"] is None and data["finished_at"] is None
