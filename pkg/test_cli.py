#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
测试命令行入口、配置管理与报告导出
"""

import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest
from jsonschema import Draft7Validator

import main
from config_manager import ConfigError, ConfigManager, deep_merge, parse_value
from export_manager import ExportManager, dumps_report, profile_rows
from mesh import GridFunction, build_grid, sample

ROOT = Path(__file__).resolve().parent
CONFIGS = ROOT / "configs"


@pytest.fixture(autouse=True)
def workspace(tmp_path, monkeypatch):
    monkeypatch.setenv("SPECTRAGAP_HOME", str(tmp_path / "home"))
    monkeypatch.chdir(tmp_path)
    return tmp_path


def validator():
    schema = json.loads((ROOT / "report_schema_v1.json").read_text(encoding="utf-8"))
    return Draft7Validator(schema)


def load_report(path):
    report = json.loads(Path(path).read_text(encoding="utf-8"))
    validator().validate(report)
    return report


def write_config(tmp_path, data, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def test_eigen_command(workspace, capsys):
    """eigen：退出码0、报告符合模式、剖面对称"""
    out = workspace / "eigen.json"
    code = main.main(["eigen", "--config", str(CONFIGS / "eigen.json"), "--out", str(out)])
    assert code == 0
    assert capsys.readouterr().out.startswith("eigen: value=")

    report = load_report(out)
    assert report["tool"] == "spectragap"
    assert report["schema_version"] == 1
    assert report["status"] == "completed"
    h = 1.0 / 256
    exact = 2.0 / h ** 2 * (1.0 - math.cos(math.pi * h))
    assert report["result"]["value"] == pytest.approx(exact, rel=1e-9)
    assert report["result"]["converged"] is True
    assert report["tolerances"]["eigen_tol"] == 1e-10
    assert report["wall_clock"] >= 0

    with open(workspace / "ground_state.csv", newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["coordinate", "value"]
    values = np.array([float(v) for _, v in rows[1:]])
    assert values.size == 255
    np.testing.assert_allclose(values, values[::-1], atol=1e-10)


def test_report_floats_round_trip(workspace):
    """报告中的浮点数按17位有效数字写出，整数值浮点带小数点，非有限值写为 null"""
    text = dumps_report({"a": 0.1, "b": float("inf"), "c": np.float64(1.0 / 3.0), "d": (1, 2), "e": 2.0})
    data = json.loads(text)
    assert data == {"a": 0.1, "b": None, "c": 1.0 / 3.0, "d": [1, 2], "e": 2.0}
    assert list(data) == sorted(data)
    assert '"a": 0.10000000000000001' in text
    assert '"c": 0.33333333333333331' in text
    assert '"e": 2.0' in text
    assert '"b": null' in text


def test_set_override_and_default_out(workspace):
    """--set 覆盖配置项；未给 --out 时写 <command>_report.json"""
    code = main.main(["eigen", "--config", str(CONFIGS / "eigen.json"),
                      "--set", "grid.n=63", "--set", "export.vector=null"])
    assert code == 0
    report = load_report(workspace / "eigen_report.json")
    assert report["config"]["grid"]["n"] == 63
    assert report["result"]["nodes"] == 63
    assert report["result"]["vector_file"] is None


def test_configuration_errors(workspace, capsys):
    """缺失配置、未知命令、未知键与格式错误的覆盖：退出码1"""
    assert main.main(["eigen", "--config", str(workspace / "missing.json")]) == 1
    assert "配置错误" in capsys.readouterr().err
    assert main.main(["nonsense"]) == 1
    assert main.main(["eigen", "--set", "grid.bogus=1"]) == 1
    assert main.main(["eigen", "--set", "grid.n"]) == 1
    assert main.main(["eigen", "--set", "grid.dim=5"]) == 1
    assert main.main(["eigen", "--set", "grid.n=true"]) == 1
    bad = write_config(workspace, {"grid": {"dim": 1, "extents": [[0.0, 1.0]], "n": 15},
                                   "potential": {"c": 1.0}})
    assert main.main(["eigen", "--config", bad]) == 1
    assert main.main(["capacity", "--set", "grid.n=15"]) == 1


def test_potential_block_checked_before_defaults(workspace):
    """用户给出的势缺少判别键时不由默认值补全；给出时整块替换默认值"""
    missing = write_config(workspace, {"potential": {"c": 1.0}}, "missing_variant.json")
    with pytest.raises(ConfigError, match="potential.variant"):
        ConfigManager(missing).load_config()
    wrong = write_config(workspace, {"potential": 3.0}, "wrong_type.json")
    with pytest.raises(ConfigError):
        ConfigManager(wrong).load_config()

    hardy = write_config(workspace, {"potential": {"variant": "hardy", "c": 0.2}}, "hardy.json")
    manager = ConfigManager(hardy)
    manager.load_config()
    assert manager.validate()["potential"] == {"variant": "hardy", "c": 0.2}
    # 未给出势时沿用默认
    assert ConfigManager().validate()["potential"] == {"variant": "constant", "c": 0.0}


def test_save_config_option(workspace):
    """--save-config 写出合并、覆盖并校验后的配置，可直接再次运行"""
    saved = workspace / "results" / "resolved.json"
    code = main.main(["eigen", "--config", str(CONFIGS / "eigen.json"), "--set", "grid.n=31",
                      "--save-config", str(saved), "--out", str(workspace / "first.json")])
    assert code == 0
    cfg = json.loads(saved.read_text(encoding="utf-8"))
    assert cfg["grid"]["n"] == 31
    assert cfg == load_report(workspace / "first.json")["config"]

    assert main.main(["eigen", "--config", str(saved), "--out", str(workspace / "second.json")]) == 0
    second = load_report(workspace / "second.json")
    assert second["result"]["value"] == load_report(workspace / "first.json")["result"]["value"]


def test_numerical_failure_exit_code(workspace, capsys):
    """V ≡ -20 超临界：构造上解失败，退出码2"""
    cfg = write_config(workspace, {"grid": {"dim": 1, "extents": [[0.0, 1.0]], "n": 63},
                                   "potential": {"variant": "constant", "c": -20.0}})
    assert main.main(["aap", "--config", cfg]) == 2
    assert "数值计算失败" in capsys.readouterr().err


def test_capacity_command(workspace):
    """capacity：一维 Cap = 6"""
    out = workspace / "cap.json"
    assert main.main(["capacity", "--config", str(CONFIGS / "capacity.json"), "--out", str(out)]) == 0
    report = load_report(out)
    assert report["result"]["capacity"] == pytest.approx(6.0, rel=1e-6)


def test_improve_command(workspace):
    """improve：u₁ = 1、u₂ = x 给出 Hardy 权重"""
    out = workspace / "improve.json"
    assert main.main(["improve", "--config", str(CONFIGS / "improve.json"), "--out", str(out)]) == 0
    report = load_report(out)
    assert report["result"]["holds"] is True


def test_probe_command(workspace, capsys):
    """probe：振荡势发散"""
    out = workspace / "probe.json"
    assert main.main(["probe", "--config", str(CONFIGS / "probe.json"), "--out", str(out)]) == 0
    assert "divergent=True" in capsys.readouterr().out
    report = load_report(out)
    assert report["result"]["kind"] == "oscillation"
    assert len(report["histories"]["integrals"]) == 4


def test_classify_command_small(workspace):
    """classify：一维拉普拉斯为次临界"""
    out = workspace / "classify.json"
    cfg = write_config(workspace, {"grid": {"dim": 1, "extents": [[0.0, 1.0]], "n": 31, "levels": 3},
                                   "potential": {"variant": "constant", "c": 0.0}})
    assert main.main(["classify", "--config", cfg, "--out", str(out)]) == 0
    report = load_report(out)
    assert report["result"]["tag"] == "Subcritical"
    assert len(report["histories"]["levels"]) == 3


def test_classify_command_supercritical(workspace, capsys):
    """classify：V ≡ -200 为超临界，报告给出负的见证值"""
    out = workspace / "super.json"
    cfg = write_config(workspace, {"grid": {"dim": 1, "extents": [[0.0, 1.0]], "n": 15, "levels": 3},
                                   "potential": {"variant": "constant", "c": -200.0}})
    assert main.main(["classify", "--config", cfg, "--out", str(out)]) == 0
    assert "tag=Supercritical" in capsys.readouterr().out
    report = load_report(out)
    assert report["result"]["tag"] == "Supercritical"
    assert report["result"]["witness_qv"] < 0
    assert report["result"]["null_sequence_qv"] is None


def test_config_manager_roundtrip(workspace):
    """默认值合并、点路径读取与保存"""
    path = write_config(workspace, {"grid": {"n": 31}, "potential": {"variant": "hardy", "c": 0.2}})
    manager = ConfigManager(path)
    manager.load_config()
    manager.apply_overrides(["eigen.tol=1e-9", "export.vector=u.txt"])
    cfg = manager.validate()
    assert cfg["grid"]["dim"] == 1 and cfg["grid"]["n"] == 31
    assert manager.get("eigen.tol") == 1e-9
    assert manager.get("export.vector") == "u.txt"
    assert manager.get("no.such.key", 7) == 7
    saved = manager.save_config(workspace / "resolved.json")
    assert json.loads(saved.read_text(encoding="utf-8")) == cfg

    with pytest.raises(ConfigError):
        ConfigManager(str(workspace / "missing.json")).load_config()


def test_merge_and_parse_helpers():
    """深合并不修改输入；覆盖值按 JSON 解析"""
    base = {"a": {"b": 1, "c": 2}}
    merged = deep_merge(base, {"a": {"b": 5}})
    assert merged == {"a": {"b": 5, "c": 2}}
    assert base == {"a": {"b": 1, "c": 2}}
    assert parse_value("[1, 2]") == [1, 2]
    assert parse_value("null") is None
    assert parse_value("hardy") == "hardy"


def test_profile_rows_and_export_formats(workspace):
    """二维剖面经过中心节点；未知格式报错"""
    grid = build_grid(2, (0.0, 1.0), [7, 5])
    fn = sample(grid, lambda x, y: x + 10.0 * y)
    rows = profile_rows(fn, axis=0)
    assert len(rows) == 7
    assert all(v == pytest.approx(x + 10.0 * 0.5) for x, v in rows)

    exporter = ExportManager(workspace)
    path = exporter.export(fn, "f.txt", "grid-text")
    assert path.read_text(encoding="utf-8").splitlines()[0].split()[:3] == ["2", "7", "5"]
    with pytest.raises(ValueError):
        exporter.export(fn, "f.bin", "binary")
    with pytest.raises(ValueError):
        exporter.export({"a": 1}, "f.csv", "csv-profile")
    with pytest.raises(ValueError):
        exporter.export(GridFunction(grid, np.zeros(grid.size)), "r.json", "json")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-v"]))
