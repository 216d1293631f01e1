import json
import math

import numpy as np
import pytest

from aerocomm.cli import cli_main
from aerocomm.config import (config_from_dict, config_to_dict,
                             load_config, load_empirical_csv)
from aerocomm.emission import (BimodalSpeedSource, CdfDiameterSource,
                               CdfSpeedSource, LogNormalSource,
                               RespiratoryEventKind)
from aerocomm.errors import ConfigError
from aerocomm.outputs import fmt, write_outputs
from aerocomm.scenario import run

SMALL_RUN = {
    "run": {"seed": 7, "duration": 2.0, "dt_global": 0.05, "dt_max": 0.05},
    "emission": {
        "particles_per_event": {"cough": 100},
        "diameter_source": {"kind": "empirical_inline", "unit": "um",
                            "values": [400.0, 500.0], "counts": [1, 1]},
        "speed_source": {"kind": "bimodal", "cloud_speed": 5.0,
                         "droplet_speed": 5.0},
    },
    "agents": [
        {"id": 0, "infected": True,
         "waypoints": [[0.0, [0.0, 0.0, 1.64]]],
         "events": {"scheduled": [{"t": 0.0, "kind": "cough"}]}},
        {"id": 1, "waypoints": [[0.0, [0.0, 1.0, 0.0]]],
         "apertures": [{"kind": "face", "offset": [0.0, 0.0, 1.4],
                        "radius": 0.12}]},
    ],
}


class TestConfigDefaults:
    def test_empty_config_gets_published_defaults(self):
        cfg = config_from_dict({})
        env = cfg.environment
        assert env.air_density == 1.2041
        assert env.air_viscosity == 18.13e-6
        assert env.gravity == 9.81
        profile = cfg.emission_profile
        assert profile.opening_angle_std_deg == 6.25
        assert profile.particles_per_event[RespiratoryEventKind.COUGH] == 5000
        assert profile.particles_per_event[RespiratoryEventKind.SNEEZE] == 15000
        assert isinstance(profile.diameter_source, LogNormalSource)
        assert isinstance(profile.speed_source, BimodalSpeedSource)
        assert profile.speed_source.cloud_speed == 8.0
        assert profile.speed_source.droplet_speed == 5.0
        assert cfg.run.seed is None
        assert cfg.symbol_level_thresholds == (100, 1000)

    def test_errors_name_the_field_path(self):
        with pytest.raises(ConfigError) as exc:
            config_from_dict({"environment": {"air_density": -1.0}})
        assert exc.value.path == "environment.air_density"
        with pytest.raises(ConfigError) as exc:
            config_from_dict({"environment": {"air_densty": 1.2}})
        assert exc.value.path == "environment.air_densty"
        with pytest.raises(ConfigError) as exc:
            config_from_dict({"agents": [{"id": 0, "mask": {"efficiency": 2}}]})
        assert "efficiency" in exc.value.path

    def test_duplicate_agent_ids(self):
        with pytest.raises(ConfigError):
            config_from_dict({"agents": [{"id": 3}, {"id": 3}]})

    def test_type_checks(self):
        with pytest.raises(ConfigError):
            config_from_dict({"run": {"seed": 1.5}})
        with pytest.raises(ConfigError):
            config_from_dict({"environment": {"evaporation_enabled": 1}})

    def test_round_trip(self):
        cfg = config_from_dict(json.loads(json.dumps(SMALL_RUN)))
        data = config_to_dict(cfg)
        cfg2 = config_from_dict(data)
        assert config_to_dict(cfg2) == data
        # round-tripped config drives an identical simulation
        a, b = run(cfg), run(cfg2)
        assert [(r.particle_id, r.x, r.y, r.t) for r in a.depositions] == \
            [(r.particle_id, r.x, r.y, r.t) for r in b.depositions]


class TestEmpiricalCsv:
    def test_unit_conversion(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("value,count\n20,3\n30,1\n")
        values, counts = load_empirical_csv(p, "um")
        assert np.allclose(values, [20e-6, 30e-6])
        assert counts.tolist() == [3, 1]

    def test_bad_header(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("val,n\n1,1\n")
        with pytest.raises(ConfigError, match="value,count"):
            load_empirical_csv(p, "m")

    def test_error_reports_line_number(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("value,count\n1,1\n2,-3\n")
        with pytest.raises(ConfigError, match="line 3"):
            load_empirical_csv(p, "m")
        p.write_text("value,count\n1,x\n")
        with pytest.raises(ConfigError, match="line 2"):
            load_empirical_csv(p, "m")

    def test_zero_weight_and_unknown_unit(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("value,count\n")
        with pytest.raises(ConfigError, match="zero total weight"):
            load_empirical_csv(p, "m")
        with pytest.raises(ConfigError, match="unknown unit"):
            load_empirical_csv(p, "furlong")

    def test_config_wires_empirical_sources(self, tmp_path):
        d = tmp_path / "diam.csv"
        d.write_text("value,count\n25,1\n")
        s = tmp_path / "dist.csv"
        s.write_text("value,count\n2.0,1\n")
        cfg = config_from_dict({"emission": {
            "diameter_source": {"kind": "empirical", "csv": str(d),
                                "unit": "um"},
            "speed_source": {"kind": "empirical_distances", "csv": str(s),
                             "unit": "m"}}})
        assert isinstance(cfg.emission_profile.diameter_source,
                          CdfDiameterSource)
        assert isinstance(cfg.emission_profile.speed_source, CdfSpeedSource)
        v = cfg.emission_profile.speed_source.cdf.values[0]
        assert v == pytest.approx(2.0 * math.sqrt(9.81 / (2 * 1.64)))


@pytest.fixture(scope="module")
def result():
    return run(config_from_dict(json.loads(json.dumps(SMALL_RUN))))


class TestOutputs:
    def test_fmt_nine_significant_digits(self):
        assert fmt(math.pi) == "3.14159265"
        assert fmt(1.0) == "1"
        assert fmt(1e-7) == "1e-07"

    def test_bundle_files_and_headers(self, result, tmp_path):
        bundle = write_outputs(result, tmp_path / "out")
        names = {p.split("/")[-1] for p in bundle.paths()}
        assert names == {"deposition.csv", "absorption.csv", "heatmap.csv",
                         "summary.json", "symbols.csv", "ledger.json"}
        dep = (tmp_path / "out" / "deposition.csv").read_text().splitlines()
        assert dep[0] == "particle_id,x_m,y_m,t_s,diameter_m,infectious"
        ab = (tmp_path / "out" / "absorption.csv").read_text().splitlines()
        assert ab[0] == \
            "receiver_id,aperture_kind,t_s,particle_id,diameter_m,infectious"
        sym = (tmp_path / "out" / "symbols.csv").read_text().splitlines()
        assert sym[0] == \
            "event_id,t_s,event_kind,level,particle_count,infectious_count"
        assert sym[1].split(",")[2] == "cough"
        hm = (tmp_path / "out" / "heatmap.csv").read_text().splitlines()
        assert hm[0].startswith("origin,") and hm[1].startswith("cell,")

    def test_records_match_ledger(self, result, tmp_path):
        write_outputs(result, tmp_path / "out")
        ledger = json.loads((tmp_path / "out" / "ledger.json").read_text())
        dep = (tmp_path / "out" / "deposition.csv").read_text().splitlines()
        ab = (tmp_path / "out" / "absorption.csv").read_text().splitlines()
        assert ledger["total"]["deposited"] == len(dep) - 1
        assert ledger["total"]["absorbed"] == len(ab) - 1
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["seed"] == 7
        assert summary["ledger"] == ledger["total"]
        assert summary["metrics"]["max_particle_range_m"] > 0

    def test_byte_stable(self, result, tmp_path):
        b1 = write_outputs(result, tmp_path / "a")
        b2 = write_outputs(result, tmp_path / "b")
        for p1, p2 in zip(b1.paths(), b2.paths()):
            assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_float_precision_in_csv(self, result, tmp_path):
        write_outputs(result, tmp_path / "out")
        dep = (tmp_path / "out" / "deposition.csv").read_text().splitlines()
        for line in dep[1:3]:
            for tok in line.split(",")[1:5]:
                mantissa = tok.lstrip("-").split("e")[0].replace(".", "")
                assert len(mantissa.lstrip("0")) <= 9


class TestCli:
    def write_config(self, tmp_path, data=None):
        p = tmp_path / "config.json"
        p.write_text(json.dumps(data if data is not None else SMALL_RUN))
        return str(p)

    def test_dmax(self, capsys):
        assert cli_main(["dmax", "--v", "5", "--h0", "1.64"]) == 0
        out = capsys.readouterr().out.strip()
        assert len(out.split(".")[1]) == 3  # three decimals
        assert float(out) == pytest.approx(2.890, abs=0.005)

    def test_dmax_invalid(self, capsys):
        assert cli_main(["dmax", "--v", "-5", "--h0", "1.64"]) == 1

    def test_validate_ok(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        assert cli_main(["validate", "--config", cfg]) == 0
        assert capsys.readouterr().out.strip() == "ok"

    def test_validate_broken(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path, {"environment": {"gravity": 0}})
        assert cli_main(["validate", "--config", cfg]) == 1
        assert "gravity" in capsys.readouterr().err

    def test_validate_bad_json(self, tmp_path, capsys):
        p = tmp_path / "broken.json"
        p.write_text("{nope")
        assert cli_main(["validate", "--config", str(p)]) == 1

    def test_missing_config_file(self, tmp_path, capsys):
        missing = str(tmp_path / "none.json")
        code = cli_main(["validate", "--config", missing])
        assert code == 2

    def test_usage_errors(self, capsys):
        assert cli_main(["dmax", "--v", "5"]) == 1
        assert cli_main(["frobnicate"]) == 1
        assert cli_main([]) == 1

    def test_simulate_end_to_end(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        out = tmp_path / "run1"
        assert cli_main(["simulate", "--config", cfg, "--out", str(out)]) == 0
        printed = capsys.readouterr().out.splitlines()
        assert len(printed) == 6
        assert (out / "summary.json").exists()

    def test_simulate_requires_seed(self, tmp_path, capsys):
        data = json.loads(json.dumps(SMALL_RUN))
        del data["run"]["seed"]
        cfg = self.write_config(tmp_path, data)
        out = tmp_path / "run"
        assert cli_main(["simulate", "--config", cfg,
                         "--out", str(out)]) == 1
        assert "seed" in capsys.readouterr().err
        assert cli_main(["simulate", "--config", cfg, "--out", str(out),
                         "--seed", "3"]) == 0

    def test_simulate_reproducible_bundles(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        code_a = cli_main(["simulate", "--config", cfg,
                           "--out", str(tmp_path / "a")])
        code_b = cli_main(["simulate", "--config", cfg,
                           "--out", str(tmp_path / "b")])
        assert code_a == code_b == 0
        for name in ("deposition.csv", "absorption.csv", "heatmap.csv",
                     "summary.json", "symbols.csv", "ledger.json"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes()

    def test_seed_override_changes_results(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        cli_main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")])
        cli_main(["simulate", "--config", cfg, "--out", str(tmp_path / "b"),
                  "--seed", "99"])
        assert (tmp_path / "a" / "deposition.csv").read_bytes() != \
            (tmp_path / "b" / "deposition.csv").read_bytes()
