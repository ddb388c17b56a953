import json
import shutil
from pathlib import Path

import pytest

from bubblealarm.pipeline import ConfigError, RunConfig, StageError, read_fits, run_pipeline, sha256

FIXTURE = Path(__file__).parent / "data" / "planted800"
GOLDEN = FIXTURE / "golden"


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    run_pipeline(RunConfig.from_ini(FIXTURE / "run.ini"), out)
    return out


def test_manifest_lists_every_stage(run_dir):
    manifest = json.loads((run_dir / "manifest.json").read_text())
    golden = json.loads((GOLDEN / "summary.json").read_text())
    assert sorted(manifest["artifacts"]) == golden["stages"]
    assert len(manifest["artifacts"]) == 8
    for stage, files in manifest["artifacts"].items():
        for name, digest in files.items():
            assert sha256(run_dir / name) == digest, f"{stage}/{name}"


@pytest.mark.parametrize("name", ["windows.csv", "events.csv", "events_learning.csv"])
def test_golden_artifacts(run_dir, name):
    assert (run_dir / name).read_text() == (GOLDEN / name).read_text()


def test_golden_summary(run_dir):
    got = json.loads((run_dir / "manifest.json").read_text())["summary"]
    want = json.loads((GOLDEN / "summary.json").read_text())["summary"]
    assert got["n_fits"] == want["n_fits"]
    assert got["skill_crash"] == pytest.approx(want["skill_crash"], abs=1e-9)
    assert got["skill_rebound"] == pytest.approx(want["skill_rebound"], abs=1e-9)


def test_config_is_recorded(run_dir):
    recorded = RunConfig.from_ini(run_dir / "config.ini")
    assert recorded == RunConfig.from_ini(FIXTURE / "run.ini")
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["config_sha256"] == recorded.digest()


def test_fit_store_is_readable(run_dir):
    fits = read_fits(run_dir / "fits.jsonl")
    assert len(fits) == 308
    assert all(f.params.tc > f.window.t2 for f in fits)


def test_rerun_is_identical(run_dir, tmp_path):
    again = run_pipeline(RunConfig.from_ini(FIXTURE / "run.ini"), tmp_path)
    first = json.loads((run_dir / "manifest.json").read_text())
    assert again.artifacts == first["artifacts"]


def test_cut_before_t10_is_rejected(tmp_path):
    cfg = RunConfig.from_ini(FIXTURE / "run.ini")
    cfg.t10, cfg.t20, cfg.learning_cut = "1990-03-01", "1992-01-01", "1990-02-01"
    with pytest.raises(ConfigError, match="learning cut"):
        cfg.validate()
    with pytest.raises(StageError) as info:
        run_pipeline(cfg, tmp_path)
    assert info.value.stage == "ingest"
    assert isinstance(info.value.cause, ConfigError)


def test_stage_failure_keeps_partial_artifacts(tmp_path):
    cfg = RunConfig.from_ini(FIXTURE / "run.ini")
    # a 60-day span is narrower than any window
    cfg.t10, cfg.t20, cfg.learning_cut = "1990-03-01", "1990-04-30", "1990-04-01"
    with pytest.raises(StageError, match="windows"):
        run_pipeline(cfg, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert list(manifest["artifacts"]) == ["ingest"]
    assert (tmp_path / "prices.csv").exists()


@pytest.mark.parametrize(
    "section, body, match",
    [
        ("bogus", "x = 1", "unknown config section"),
        ("fit", "colour = red", "unknown config key"),
        ("windows", "dt1 = fifty", "cannot parse"),
    ],
)
def test_config_errors(tmp_path, section, body, match):
    p = tmp_path / "bad.ini"
    p.write_text(f"[{section}]\n{body}\n")
    with pytest.raises(ConfigError, match=match):
        RunConfig.from_ini(p)


def test_relative_paths_resolve_against_config(tmp_path):
    shutil.copy(FIXTURE / "run.ini", tmp_path / "run.ini")
    cfg = RunConfig.from_ini(tmp_path / "run.ini")
    assert cfg.prices == str((tmp_path / "prices.csv").resolve())
