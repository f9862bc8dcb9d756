import json

import numpy as np
import pytest

from finitebath.cli import build_scenario, main, run
from finitebath.errors import ConfigurationError
from finitebath.presets import preset, presets, scale_volumes


def mini_config(**overrides):
    cfg = {
        "seed": 99,
        "t_grid": {"t_max": 10.0, "dt": 1.0},
        "system": {"levels": [0.0, 1.0], "coupling": "sigma_x"},
        "baths": [
            {
                "windows": [
                    {"center": 0.0, "width": 0.5, "volume": 25},
                    {"center": 1.0, "width": 0.5, "volume": 35},
                ],
                "spectrum": "regular",
                "coupling": {"lambda": 3e-3, "variance": 1.0},
            }
        ],
        "initial": {"system_level": 1, "bath_windows": [0]},
        "solvers": ["exact", "emme-markov", "emme-redfield", "bms", "analytic"],
        "ensemble": {"kind": "basis-ensemble"},
    }
    cfg.update(overrides)
    return cfg


# ---------------------------------------------------------------------------
# configuration validation


def test_empty_solver_list_rejected():
    with pytest.raises(ConfigurationError):
        build_scenario(mini_config(solvers=[]))


def test_unknown_solver_rejected():
    with pytest.raises(ConfigurationError):
        build_scenario(mini_config(solvers=["exact", "magic"]))


def test_seed_mandatory_for_stochastic_scenarios():
    cfg = mini_config()
    del cfg["seed"]
    with pytest.raises(ConfigurationError, match="seed"):
        build_scenario(cfg)


def test_seed_optional_when_fully_deterministic():
    cfg = mini_config(solvers=["emme-markov"])
    cfg["baths"][0]["coupling"]["variance"] = 0.0
    cfg["baths"][0]["coupling"]["block_mean"] = [0.5, 0.0]
    cfg["ensemble"] = {"kind": "basis-ensemble"}
    del cfg["seed"]
    build_scenario(cfg)


def test_component_seeds_derived_and_deterministic():
    a = build_scenario(mini_config())
    b = build_scenario(mini_config())
    assert a.bath_specs[0].seed == b.bath_specs[0].seed
    assert a.couplings[0][0].seed == b.couplings[0][0].seed
    assert a.bath_specs[0].seed != a.couplings[0][0].seed


def test_multi_operator_couplings_get_distinct_seeds():
    cfg = mini_config(solvers=["emme-markov"])
    cfg["system"]["coupling"] = [
        [[0.0, 1.0], [1.0, 0.0]],
        [[1.0, 0.0], [0.0, -1.0]],
    ]
    sc = build_scenario(cfg)
    assert len(sc.couplings[0]) == 2
    assert sc.couplings[0][0].seed != sc.couplings[0][1].seed
    assert sc.couplings[0][1].operator_label == 1


# ---------------------------------------------------------------------------
# presets


def test_fig2_presets_volumes_and_spectra():
    table = presets()
    assert [w["volume"] for w in table["fig2-row1-col1"]["baths"][0]["windows"]] == [400, 600]
    assert [w["volume"] for w in table["fig2-row2-col1"]["baths"][0]["windows"]] == [600, 400]
    assert table["fig2-row1-col2"]["baths"][0]["spectrum"] == "random-uniform"
    assert table["fig2-row1-col3"]["initial"]["fill"] == "half"
    assert table["fig2-row1"] == table["fig2-row1-col1"]


def test_appf_presets_volumes_and_lambdas():
    table = presets()
    for name, lam in (("appf-weak", 5e-4), ("appf-base", 3e-3), ("appf-strong", 1e-2)):
        cfg = table[name]
        assert [w["volume"] for w in cfg["baths"][0]["windows"]] == [20, 40]
        assert cfg["baths"][0]["coupling"]["lambda"] == lam


def test_quench_preset_windows_and_protocol():
    cfg = presets()["quench"]
    assert [w["volume"] for w in cfg["baths"][0]["windows"]] == [100, 200, 400]
    assert [w["center"] for w in cfg["baths"][0]["windows"]] == [0.0, 1.0, 2.0]
    starts = [seg["t_start"] for seg in cfg["system"]["protocol"]]
    assert starts == [0.0, 120.0]
    assert cfg["t_grid"]["t_max"] == 240.0  # one full period


def test_ci_presets_scale_volumes_by_four():
    table = presets()
    assert [w["volume"] for w in table["fig2-row1-col1-ci"]["baths"][0]["windows"]] == [100, 150]
    assert [w["volume"] for w in table["quench-ci"]["baths"][0]["windows"]] == [25, 50, 100]


def test_scale_volumes_never_drops_below_one():
    cfg = scale_volumes(preset("appf-weak"), 100.0)
    assert all(w["volume"] >= 1 for w in cfg["baths"][0]["windows"])


def test_unknown_preset_raises():
    with pytest.raises(ConfigurationError):
        preset("fig9")


# ---------------------------------------------------------------------------
# end-to-end runs


def test_run_writes_all_outputs(tmp_path):
    code = run(mini_config(), tmp_path, name="mini")
    assert code == 0
    for fname in (
        "exact.csv", "emme-markov.csv", "emme-redfield.csv", "bms.csv",
        "analytic.csv", "joined.csv", "thermo_emme-markov.csv", "metadata.json",
    ):
        assert (tmp_path / fname).exists(), fname
    header = (tmp_path / "emme-markov.csv").read_text().splitlines()[0]
    assert header.split(",")[0] == "t"
    assert "p_k1_E0" in header and "p_k0_E1" in header
    joined_header = (tmp_path / "joined.csv").read_text().splitlines()[0]
    assert "exact:p_k1_E0" in joined_header
    assert "bms:p_k1" in joined_header
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["seed"] == 99
    assert meta["conventions"]["gain_convention"] == "conserving"
    assert any("volume" in w for w in meta["regime_warnings"])  # 25 < 100


def test_outputs_bit_identical_for_same_seed(tmp_path):
    run(mini_config(), tmp_path / "a", name="mini")
    run(mini_config(), tmp_path / "b", name="mini")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_solvers_share_the_time_grid(tmp_path):
    run(mini_config(), tmp_path, name="mini")
    lines = (tmp_path / "joined.csv").read_text().splitlines()
    t_joined = [float(l.split(",")[0]) for l in lines[1:]]
    assert t_joined == list(np.arange(0.0, 10.5, 1.0))


def test_main_exit_codes(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(mini_config(solvers=[])))
    assert main(["run", str(cfg_path), "--out", str(tmp_path / "o")]) == 2

    big = mini_config(solvers=["exact"], dim_cap=10)
    cfg_path.write_text(json.dumps(big))
    assert main(["run", str(cfg_path), "--out", str(tmp_path / "o2")]) == 4

    ok = mini_config(solvers=["emme-markov"])
    cfg_path.write_text(json.dumps(ok))
    assert main(["run", str(cfg_path), "--out", str(tmp_path / "o3")]) == 0

    assert main(["run", str(tmp_path / "missing.json"), "--out", "x"]) == 2


def test_main_list_presets(capsys):
    assert main(["list-presets"]) == 0
    out = capsys.readouterr().out
    assert "fig2-row1-col1" in out and "quench" in out


def test_main_preset_with_overrides(tmp_path):
    code = main([
        "preset", "fig2-row1-col1", "--out", str(tmp_path),
        "--seed", "7", "--solvers", "emme-markov,analytic",
        "--scale-volumes", "20",
    ])
    assert code == 0
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["seed"] == 7
    assert meta["solvers"] == ["emme-markov", "analytic"]
    vols = [w["volume"] for w in meta["parameters"]["baths"][0]["windows"]]
    assert vols == [20, 30]


def test_mi_file_written_when_sampled(tmp_path):
    cfg = mini_config(solvers=["exact"], mi_stride=2)
    run(cfg, tmp_path, name="mini")
    lines = (tmp_path / "exact_mi.csv").read_text().splitlines()
    assert lines[0] == "t,mutual_information"
    assert len(lines) == 1 + 6  # 11 grid points sampled every 2nd


def test_thermo_csv_columns(tmp_path):
    run(mini_config(solvers=["emme-markov"]), tmp_path, name="mini")
    header = (tmp_path / "thermo_emme-markov.csv").read_text().splitlines()[0].split(",")
    for col in ("t", "u", "u_s", "u_b0", "w", "q0", "s_obs", "s_obs_s", "s_obs_b",
                "i_cg", "t_star0", "entropy_production_rate", "first_law_residual",
                "clausius_lhs1", "clausius_lhs2", "clausius_delta_s_obs"):
        assert col in header
