import json
from importlib import resources

import pytest

from relcollapse.cli import main


def run_cli(tmp_path, argv, name="out"):
    out = tmp_path / name
    code = main(list(argv) + ["-o", str(out)])
    return code, (out.read_text() if out.exists() else None)


def test_kernel_eval_at_origin(tmp_path):
    code, text = run_cli(tmp_path, ["kernel", "eval", "--beta", "2", "--s", "0,1", "--format", "json"])
    assert code == 0
    doc = json.loads(text)
    assert doc["payload"]["rows"][0][1] == 1.0
    assert len(doc["sha256"]) == 64


def test_missing_beta_is_invalid(tmp_path):
    assert run_cli(tmp_path, ["kernel", "eval", "--s", "0"])[0] == 2


def test_usage_error_exits_2():
    assert main(["kernel", "eval", "--bogus"]) == 2


def test_white_kernel_routed_to_limit_rate_is_refused(tmp_path):
    code, _ = run_cli(tmp_path, ["rate", "nr", "--variant", "white"])
    assert code == 2


def test_zero_occupancy_rate_is_zero(tmp_path):
    code, text = run_cli(tmp_path, ["rate", "momentum", "--config", "preset:zero_occupancy", "--format", "json"])
    assert code == 0
    payload = json.loads(text)["payload"]
    row = dict(zip(payload["columns"], payload["rows"][0]))
    assert row["value"] == 0.0


def test_unknown_ini_key_is_invalid(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[kernel.eval]\nbeta = 1\ns = 0\nwrong_key = 3\n")
    assert run_cli(tmp_path, ["kernel", "eval", "--config", str(ini)])[0] == 2


def test_ini_supplies_required_and_cli_overrides(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[kernel]\nbeta = 1\n[kernel.eval]\ns = 0,0.5\n")
    code, text = run_cli(tmp_path, ["kernel", "eval", "--config", str(ini), "--beta", "2", "--format", "json"])
    assert code == 0
    cfg = json.loads(text)["config"]
    assert cfg["beta"] == 2.0 and cfg["s"] == [0.0, 0.5]


def test_mcc_exit_codes(tmp_path):
    assert run_cli(tmp_path, ["mcc", "probe", "--dt", "-1"])[0] == 2
    assert run_cli(tmp_path, ["mcc", "probe", "--nonlocal", "--nodes", "8"])[0] == 1
    assert run_cli(tmp_path, ["mcc", "probe", "--nonlocal", "--nodes", "8", "--expect-violation"])[0] == 0


def test_unravel_zero_coupling(tmp_path):
    code, text = run_cli(tmp_path, ["unravel", "run", "--gamma", "0", "--n-traj", "8", "--format", "json"])
    assert code == 0
    assert json.loads(text)["payload"]["summary"]["norm_drift"] == 0.0


@pytest.mark.parametrize("argv", [
    ["kernel", "sample", "--beta", "1", "--points", "16", "--n", "16"],
    ["mcc", "sweep", "--dts", "0.5", "--dxs", "1.5,2", "--nodes", "8"],
    ["unravel", "run", "--n-traj", "32", "--kind", "linear"],
])
def test_outputs_identical_across_thread_counts_and_replay(tmp_path, argv):
    c1, a = run_cli(tmp_path, argv + ["--threads", "1"], "a")
    c4, b = run_cli(tmp_path, argv + ["--threads", "4"], "b")
    assert c1 == c4 == 0
    assert a == b
    assert main(["replay", str(tmp_path / "a"), "--threads", "2"]) == 0


def test_replay_detects_tampering(tmp_path):
    code, text = run_cli(tmp_path, ["kernel", "eval", "--beta", "1", "--s", "0.5"])
    assert code == 0
    f = tmp_path / "out"
    f.write_text(text.replace(text.splitlines()[-1], text.splitlines()[-1] + "1"))
    assert main(["replay", str(f)]) == 1


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("ARTIFACT_SEED", "7")
    code, text = run_cli(tmp_path, ["kernel", "sample", "--beta", "1", "--points", "8", "--n", "8", "--format", "json"])
    assert code == 0
    assert json.loads(text)["config"]["seed"] == 7


def test_every_preset_parses():
    names = sorted(p.name for p in resources.files("relcollapse").joinpath("presets").iterdir()
                   if p.name.endswith(".ini"))
    assert len(names) >= 14
    from relcollapse.cli import _resolve_config_path
    from relcollapse.io import load_ini
    for n in names:
        sections = load_ini(_resolve_config_path("preset:" + n[:-4]))
        assert sections
