import json
import subprocess
import sys

import numpy as np
import pytest

from kcmlab.cli import main as cli_main
from kcmlab.config import ConfigError, load_config, validate_config
from kcmlab.experiments import emit_summary, run_experiment, verify_manifest


def test_validation_unknown_key_and_ranges():
    with pytest.raises(ConfigError, match="kind"):
        validate_config({"kind": "nope"})
    with pytest.raises(ConfigError, match="kcm.flux: unknown key"):
        validate_config({"kind": "kcm", "flux": 1})
    with pytest.raises(ConfigError, match="kcm.q"):
        validate_config({"kind": "kcm", "q": 1.5, "n": 4, "horizon": 1.0})
    with pytest.raises(ConfigError, match="survival.replicas"):
        validate_config({"kind": "survival", "replicas": 0, "q": 0.9, "q0": 0.9,
                         "p_init": 0.9, "horizon": 1.0})
    cfg = validate_config({"kind": "kcm", "family": "fa:2:2", "n": 4, "q": 0.5,
                           "horizon": 1.0, "seed": 3})
    assert cfg.seed == 3 and cfg.kind == "kcm"
    assert cfg.hash() == validate_config({"kind": "kcm", "family": "fa:2:2", "n": 4,
                                          "q": 0.5, "horizon": 1.0, "seed": 3}).hash()


def test_load_toml_and_json(tmp_path):
    toml = tmp_path / "a.toml"
    toml.write_text('kind = "classify"\nfamily = "fa:1:2"\nexpect = "supercritical"\n')
    js = tmp_path / "a.json"
    js.write_text(json.dumps({"kind": "classify", "family": "fa:1:2",
                              "expect": "supercritical"}))
    assert load_config(toml).hash() == load_config(js).hash()


def test_classify_experiment_and_expectation(tmp_path):
    cfg = validate_config({"kind": "classify", "family": "fa:2:2", "expect": "critical"})
    rec = run_experiment(cfg, out_dir=tmp_path)
    assert rec.passed
    bad = validate_config({"kind": "classify", "family": "fa:2:2", "expect": "supercritical"})
    rec2 = run_experiment(bad, out_dir=tmp_path / "b")
    assert not rec2.passed


def test_byte_identical_reruns(tmp_path):
    raw = {"kind": "cp", "family": "fa:2:2", "n": 6, "q0": 0.9, "horizon": 10.0,
           "init": 0.7, "seed": 5}
    rec1 = run_experiment(validate_config(raw), out_dir=tmp_path / "x")
    rec2 = run_experiment(validate_config(raw), out_dir=tmp_path / "y")
    assert rec1.config_hash == rec2.config_hash
    for name in rec1.outputs:
        assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()


def test_verify_roundtrip_and_corruption(tmp_path):
    raw = {"kind": "grand-coupling", "family": "fa:2:2", "n": 6, "q": 0.95, "q0": 0.9,
           "p_init": 0.8, "n_dominated": 2, "horizon": 15.0, "seeds": 2, "seed": 1}
    rec = run_experiment(validate_config(raw), out_dir=tmp_path)
    assert rec.passed
    ok, msgs = verify_manifest(tmp_path / "manifest.json")
    assert ok, msgs
    # corrupt the stored trajectory: verification must fail
    ev = tmp_path / "cp_reference_events.jsonl"
    lines = ev.read_text().splitlines()
    ent = json.loads(lines[0])
    ent["new"] = 1 - ent["new"]
    lines[0] = json.dumps(ent)
    ev.write_text("\n".join(lines) + "\n")
    ok2, msgs2 = verify_manifest(tmp_path / "manifest.json")
    assert not ok2 and msgs2


def test_negative_control_fault_injection(tmp_path):
    raw = {"kind": "orange", "family": "fa:2:2", "n": 6, "q0": 0.9, "p_init": 0.6,
           "horizon": 20.0, "seed": 2, "inject_fault": "drop_add"}
    rec = run_experiment(validate_config(raw), out_dir=tmp_path)
    assert not rec.passed
    viol = json.loads((tmp_path / "orange_violations.json").read_text())
    assert viol  # nonempty violation report


def test_emit_summary():
    assert emit_summary([]) == ""
    cfg = validate_config({"kind": "classify", "family": "fa:3:2",
                           "expect": "trivial-subcritical"})
    import tempfile

    with tempfile.TemporaryDirectory() as d:
        rec = run_experiment(cfg, out_dir=d)
    text = emit_summary([rec])
    assert "classify" in text and "PASS" in text


def test_cli_end_to_end(tmp_path):
    cfgfile = tmp_path / "c.toml"
    cfgfile.write_text(
        'kind = "monotone-set"\nell = 5\nseeds = 3\nseed = 4\nfamily = "fa:2:2"\n'
    )
    code = cli_main(["run", str(cfgfile), "--out", str(tmp_path / "out")])
    assert code == 0
    assert (tmp_path / "out" / "monotone_chain.csv").exists()
    code = cli_main(["verify", str(tmp_path / "out" / "manifest.json")])
    assert code == 0
    assert cli_main(["classify", "--family", "fa:3:2"]) == 0


def test_cli_config_error(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text('kind = "kcm"\nunknown_flag = 3\n')
    assert cli_main(["run", str(bad)]) == 2


def test_cli_family_json(tmp_path):
    fam = tmp_path / "fam.json"
    fam.write_text(json.dumps({"dim": 2, "rules": [[[-1, 0], [0, -1], [-1, -1]]]}))
    assert cli_main(["classify", "--family", str(fam)]) == 0


def test_cli_entrypoint_subprocess():
    out = subprocess.run([sys.executable, "-m", "kcmlab.cli", "classify",
                          "--family", "fa:2:2"], capture_output=True, text=True)
    assert out.returncode == 0
    assert out.stdout.strip() == "critical"


def test_frame_snapshots_export(tmp_path):
    raw = {"kind": "kcm", "family": "fa:2:2", "n": 5, "q": 0.9, "horizon": 8.0,
           "init": "zeros", "record_frames": [2.0, 8.0], "seed": 9}
    rec = run_experiment(validate_config(raw), out_dir=tmp_path)
    assert "kcm_frames.txt" in rec.outputs
    lines = (tmp_path / "kcm_frames.txt").read_text().splitlines()
    header = json.loads(lines[0])
    assert header["dim"] == 2 and header["lo"] == [0, 0] and header["hi"] == [4, 4]
    assert set(lines[1]) <= {"0", "1"} and len(lines[1]) == 25


def test_emit_summary_shows_scaling_ratios(tmp_path):
    raw = {"kind": "mixing-scaling", "family": "fa:2:2", "ns": [4, 8], "q": 0.95,
           "replicas": 6, "ratio_window": [1.2, 3.5], "seed": 2}
    rec = run_experiment(validate_config(raw), out_dir=tmp_path)
    text = emit_summary([rec])
    assert "t_hat_ratios" in text
    raw2 = {"kind": "lpp", "family": "corner:2", "ns": [8, 16], "seeds": 5, "seed": 1}
    rec2 = run_experiment(validate_config(raw2), out_dir=tmp_path / "l")
    assert "consecutive_ratios" in emit_summary([rec2])
    assert (tmp_path / "l" / "lpp_field.csv").exists()


def test_grand_coupling_fault_injection(tmp_path):
    raw = {"kind": "grand-coupling", "family": "fa:2:2", "n": 6, "q": 0.95, "q0": 0.9,
           "p_init": 0.7, "n_dominated": 2, "horizon": 20.0, "seeds": 1, "seed": 3,
           "inject_fault": "drop_add"}
    rec = run_experiment(validate_config(raw), out_dir=tmp_path)
    assert not rec.passed
    assert rec.verdicts["fault_injected_and_detected"] is True or not rec.verdicts["no_violations"]
    viol = json.loads((tmp_path / "coupling_violations.json").read_text())
    assert viol
