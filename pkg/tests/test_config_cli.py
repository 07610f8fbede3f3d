import json
import math

import numpy as np
import pytest

from mmlqg import cli_app, config, verify
from mmlqg.errors import SchemaError


def _lqg_cfg(**extra):
    cfg = {
        "kind": "lqg",
        "grid": {"T": 1.0, "M": 400},
        "A": [[0.0]],
        "B": [[1.0]],
        "Q": [[1.0]],
        "R": [[1.0]],
        "Qhat": [[0.0]],
    }
    cfg.update(extra)
    return cfg


def _mfg_cfg(**extra):
    cfg = {
        "kind": "mfg",
        "grid": {"T": 1.0, "M": 40},
        "pi": [0.6, 0.4],
        "major": {"A0": [[0.1, 0.2], [0.0, -0.3]], "B0": [[1.0], [0.5]],
                  "Qhat0": [[0.5, 0.0], [0.0, 0.5]],
                  "Q0": [[1.0, 0.0], [0.0, 1.0]], "R0": [[1.0]]},
        "minors": [
            {"Ak": [[-0.2, 0.1], [0.0, -0.4]], "Bk": [[1.0], [0.3]],
             "Qhatk": [[0.4, 0.0], [0.0, 0.4]],
             "Qk": [[1.0, 0.0], [0.0, 1.0]], "Rk": [[1.0]]},
            {"Ak": [[0.0, -0.1], [0.2, -0.5]], "Bk": [[0.8], [1.0]],
             "Qhatk": [[0.3, 0.0], [0.0, 0.3]],
             "Qk": [[1.2, 0.0], [0.0, 1.2]], "Rk": [[1.2]]},
        ],
    }
    cfg.update(extra)
    return cfg


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def _run(argv):
    return cli_app.main(argv)


# ------------------------------------------------------------------ config


def test_missing_key_names_the_field():
    cfg = _lqg_cfg()
    del cfg["R"]
    with pytest.raises(SchemaError, match="'R'"):
        config.parse_lqg_problem(cfg)


def test_unknown_key_rejected_with_path():
    cfg = _mfg_cfg()
    cfg["major"]["bogus"] = 1
    with pytest.raises(SchemaError, match=r"\$\.major.*'bogus'"):
        config.parse_mfg_problem(cfg)


def test_wrong_shape_names_location():
    cfg = _mfg_cfg()
    cfg["minors"][1]["Rk"] = [[1.0, 0.0]]
    with pytest.raises(SchemaError, match=r"\$\.minors\[1\]\.Rk"):
        config.parse_mfg_problem(cfg)


def test_pi_length_mismatch_rejected():
    cfg = _mfg_cfg(pi=[0.5, 0.3, 0.2])
    with pytest.raises(SchemaError):
        config.parse_mfg_problem(cfg)


def test_non_numeric_matrix_rejected():
    cfg = _lqg_cfg(A=[["x"]])
    with pytest.raises(SchemaError, match=r"\$\.A"):
        config.parse_lqg_problem(cfg)


def test_sampled_drift_accepted():
    cfg = _lqg_cfg()
    M = cfg["grid"]["M"]
    cfg["b"] = [[0.1 * j, -0.1 * j] for j in range(M + 1)]
    cfg["A"] = [[0.0, 0.0], [0.0, 0.0]]
    cfg["B"] = [[1.0], [0.0]]
    cfg["Q"] = [[1.0, 0.0], [0.0, 1.0]]
    cfg["Qhat"] = [[0.0, 0.0], [0.0, 0.0]]
    p = config.parse_lqg_problem(cfg)
    assert p.b.values.shape == (M + 1, 2, 1)
    assert p.b.values[3, 0, 0] == pytest.approx(0.3)


def test_canonical_hash_ignores_key_order():
    a = {"kind": "lqg", "grid": {"T": 1.0, "M": 4}}
    b = {"grid": {"M": 4, "T": 1.0}, "kind": "lqg"}
    assert config.canonical_hash(a) == config.canonical_hash(b)
    assert config.canonical_hash(a) != config.canonical_hash(
        {"kind": "lqg", "grid": {"T": 1.0, "M": 5}})


# ---------------------------------------------------------------- solve-lqg


def test_solve_lqg_tanh_summary(tmp_path):
    cfg_path = _write(tmp_path, _lqg_cfg())
    out = tmp_path / "run"
    assert _run(["solve-lqg", "--config", cfg_path, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["Pi0"][0][0] == pytest.approx(math.tanh(1.0), abs=1e-6)
    assert summary["validation"]["passed"]
    header = (out / "pi.csv").read_text().splitlines()[0]
    assert header == "node,row,col,value"


def test_solve_lqg_missing_R_exits_2(tmp_path, capsys):
    cfg = _lqg_cfg()
    del cfg["R"]
    cfg_path = _write(tmp_path, cfg)
    code = _run(["solve-lqg", "--config", cfg_path,
                 "--out", str(tmp_path / "run")])
    assert code == 2
    assert "'R'" in capsys.readouterr().err


def test_solve_lqg_rerun_is_byte_identical(tmp_path):
    cfg_path = _write(tmp_path, _lqg_cfg())
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert _run(["solve-lqg", "--config", cfg_path, "--out", str(out1)]) == 0
    assert _run(["solve-lqg", "--config", cfg_path, "--out", str(out2)]) == 0
    names = sorted(f.name for f in out1.iterdir())
    assert "manifest.json" in names
    for name in names:
        if name == "manifest.json":
            continue  # timing manifest is the one file allowed to move
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_indefinite_weights_exit_4(tmp_path):
    cfg_path = _write(tmp_path, _lqg_cfg(R=[[-1.0]]))
    code = _run(["solve-lqg", "--config", cfg_path,
                 "--out", str(tmp_path / "run")])
    assert code == 4


# ---------------------------------------------------------------- solve-mfg


def test_solve_mfg_decoupled_outputs(tmp_path):
    cfg_path = _write(tmp_path, _mfg_cfg(fixed_point={"theta": 1.0}))
    out = tmp_path / "run"
    assert _run(["solve-mfg", "--config", cfg_path, "--out", str(out)]) == 0
    residuals = (out / "residuals.csv").read_text().splitlines()
    assert len(residuals) - 1 <= 2  # header plus at most two iterations
    summary = json.loads((out / "summary.json").read_text())
    assert summary["terminal_weight_gap"] == 0.0
    assert summary["converged"]
    assert (out / "pi_minor1.csv").exists()
    assert (out / "mf_Abar.csv").exists()


def test_solve_mfg_nondistribution_pi_exits_4(tmp_path, capsys):
    cfg_path = _write(tmp_path, _mfg_cfg(pi=[0.7, 0.7]))
    code = _run(["solve-mfg", "--config", cfg_path,
                 "--out", str(tmp_path / "run")])
    assert code == 4
    assert "pi" in capsys.readouterr().err


def test_solve_mfg_nonconvergence_exits_3(tmp_path):
    cfg = _mfg_cfg(fixed_point={"max_iters": 1, "theta": 0.5, "tol": 1e-14})
    cfg["major"]["F0"] = [[0.3, 0.0], [0.1, 0.2]]
    cfg["major"]["H0"] = [[0.4, 0.0], [0.0, 0.3]]
    cfg["minors"][0]["Gk"] = [[0.3, 0.0], [0.1, 0.2]]
    cfg_path = _write(tmp_path, cfg)
    code = _run(["solve-mfg", "--config", cfg_path,
                 "--out", str(tmp_path / "run")])
    assert code == 3


# ----------------------------------------------------------------- simulate


def test_simulate_zero_noise_states_are_zero(tmp_path):
    cfg = _mfg_cfg(population={"N": 3, "num_paths": 2, "master_seed": 5})
    cfg_path = _write(tmp_path, cfg)
    out = tmp_path / "run"
    assert _run(["simulate", "--config", cfg_path, "--out", str(out)]) == 0
    body = (out / "states.csv").read_text().splitlines()[1:]
    values = {line.rsplit(",", 1)[1] for line in body}
    assert values == {"0"}


def test_simulate_seed_reproducibility_and_override(tmp_path):
    cfg = _mfg_cfg(population={"N": 3, "num_paths": 1, "master_seed": 5})
    cfg["major"]["sigma0"] = [[0.2, 0.0], [0.0, 0.2]]
    for mn in cfg["minors"]:
        mn["sigmak"] = [[0.2, 0.0], [0.0, 0.2]]
    cfg_path = _write(tmp_path, cfg)
    outs = [tmp_path / name for name in ("a", "b", "c")]
    assert _run(["simulate", "--config", cfg_path, "--out", str(outs[0])]) == 0
    assert _run(["simulate", "--config", cfg_path, "--out", str(outs[1])]) == 0
    assert _run(["simulate", "--config", cfg_path, "--out", str(outs[2]),
                 "--seed", "6"]) == 0
    same = (outs[0] / "states.csv").read_bytes()
    assert same == (outs[1] / "states.csv").read_bytes()
    assert same != (outs[2] / "states.csv").read_bytes()


def test_simulate_writes_convergence_slope(tmp_path):
    cfg = _mfg_cfg(population={"N": 2, "num_paths": 1, "master_seed": 0},
                   study={"Ns": [16, 64], "seeds": [0, 1, 2, 3]})
    cfg["major"]["sigma0"] = [[0.2, 0.0], [0.0, 0.2]]
    for mn in cfg["minors"]:
        mn["sigmak"] = [[0.2, 0.0], [0.0, 0.2]]
    cfg["init_cov_major"] = [[0.2, 0.0], [0.0, 0.2]]
    cfg["init_cov_minor"] = [[0.2, 0.0], [0.0, 0.2]]
    cfg_path = _write(tmp_path, cfg)
    out = tmp_path / "run"
    assert _run(["simulate", "--config", cfg_path, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    # plumbing check only: two N values and four seeds give a noisy slope,
    # so just pin the sign and a generous band
    assert -1.2 < summary["convergence_slope"] < -0.1
    lines = (out / "convergence.csv").read_text().splitlines()
    assert len(lines) == 3  # header + one row per N


# ----------------------------------------------------------------- nash-gap


def test_nash_gap_decoupled_table(tmp_path):
    cfg = _mfg_cfg(nash={"Ns": [2, 3, 4]})
    cfg_path = _write(tmp_path, cfg)
    out = tmp_path / "run"
    assert _run(["nash-gap", "--config", cfg_path, "--out", str(out)]) == 0
    lines = (out / "gaps.csv").read_text().splitlines()
    assert len(lines) == 4  # header + one row per requested N
    for line in lines[1:]:
        cells = [float(v) for v in line.split(",")]
        assert all(g >= -1e-8 for g in cells[1:])
        assert max(abs(g) for g in cells[1:]) <= 1e-6
    summary = json.loads((out / "summary.json").read_text())
    assert summary["all_nonnegative"]


def test_nash_gap_threads_do_not_change_bytes(tmp_path):
    cfg = _mfg_cfg(nash={"Ns": [2, 3]})
    cfg["major"]["F0"] = [[0.3, 0.0], [0.1, 0.2]]
    cfg["major"]["H0"] = [[0.4, 0.0], [0.0, 0.3]]
    cfg["major"]["sigma0"] = [[0.2, 0.0], [0.0, 0.2]]
    cfg["minors"][0]["Gk"] = [[0.3, 0.0], [0.1, 0.2]]
    for mn in cfg["minors"]:
        mn["sigmak"] = [[0.2, 0.0], [0.0, 0.2]]
    cfg_path = _write(tmp_path, cfg)
    out1, out4 = tmp_path / "t1", tmp_path / "t4"
    assert _run(["nash-gap", "--config", cfg_path, "--out", str(out1),
                 "--threads", "1"]) == 0
    assert _run(["nash-gap", "--config", cfg_path, "--out", str(out4),
                 "--threads", "4"]) == 0
    assert (out1 / "gaps.csv").read_bytes() == (out4 / "gaps.csv").read_bytes()
    assert (out1 / "summary.json").read_bytes() == \
        (out4 / "summary.json").read_bytes()


# ------------------------------------------------------------------- verify


def test_verify_suites_all_pass_and_exit_zero():
    results = verify.run_suites()
    assert all(r.passed for r in results), [
        (r.name, r.detail) for r in results if not r.passed]
    assert verify.exit_code(results) == 0


def test_verify_names_a_corrupted_fixture(monkeypatch):
    # a coupled game is not decoupled: the one-shot fixed point must miss
    from mmlqg.toys import coupled_toy
    monkeypatch.setitem(verify.FIXTURES, "decoupled", coupled_toy)
    results = verify.run_suites(["consistency_fixed_point"])
    assert len(results) == 1
    assert not results[0].passed
    assert results[0].name == "consistency_fixed_point"


def test_verify_exit_code_counts_failures_capped():
    good = verify.SuiteResult("a", True, "", 0.0)
    bad = verify.SuiteResult("b", False, "boom", 0.0)
    assert verify.exit_code([good, bad, bad]) == 2
    assert verify.exit_code([bad] * 300) == 125


def test_manifest_carries_config_hash(tmp_path):
    cfg = _lqg_cfg()
    cfg_path = _write(tmp_path, cfg)
    out = tmp_path / "run"
    assert _run(["solve-lqg", "--config", cfg_path, "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_sha256"] == config.canonical_hash(cfg)
    assert manifest["command"] == "solve-lqg"
    assert "wall_s" in manifest["timings"]
