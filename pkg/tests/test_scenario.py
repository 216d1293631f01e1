import copy

import numpy as np
import pytest

from aerocomm.config import config_from_dict
from aerocomm.emission import RespiratoryEventKind
from aerocomm.errors import ConfigError, ConservationError
from aerocomm.scenario import (Agent, Aperture, ApertureKind, absorb_check,
                               accumulate_dose, infection_decision,
                               ledger_check, receiver_position, run,
                               segment_sphere_entry)

# heavy (500 um) droplets so trajectories are short and steps cheap
BASE = {
    "run": {"seed": 11, "duration": 3.0, "dt_global": 0.05, "dt_max": 0.05},
    "emission": {
        "particles_per_event": {"cough": 200},
        "diameter_source": {"kind": "empirical_inline", "unit": "um",
                            "values": [500.0], "counts": [1.0]},
        "speed_source": {"kind": "bimodal", "cloud_speed": 5.0,
                         "droplet_speed": 5.0},
    },
    "agents": [
        {"id": 0, "infected": True,
         "waypoints": [[0.0, [0.0, 0.0, 1.64]]],
         "events": {"scheduled": [{"t": 0.0, "kind": "cough"}]}},
        {"id": 1,
         "waypoints": [[0.0, [0.0, 1.0, 0.0]]],
         "detection_threshold": 5,
         "apertures": [{"kind": "face", "offset": [0.0, 0.0, 1.4],
                        "radius": 0.12, "gain": 1.0}]},
    ],
}


def make_config(mutate=None):
    data = copy.deepcopy(BASE)
    if mutate:
        mutate(data)
    return config_from_dict(data)


class TestReceiverPosition:
    def test_interpolation_and_clamping(self):
        a = Agent(id=0, waypoints=[(0.0, [0.0, 0.0, 0.0]),
                                   (2.0, [2.0, 0.0, 0.0])])
        assert np.allclose(receiver_position(a, -1.0), [0.0, 0.0, 0.0])
        assert np.allclose(receiver_position(a, 0.5), [0.5, 0.0, 0.0])
        assert np.allclose(receiver_position(a, 99.0), [2.0, 0.0, 0.0])

    def test_waypoint_order_validated(self):
        with pytest.raises(ConfigError):
            Agent(id=0, waypoints=[(1.0, [0, 0, 0]), (1.0, [1, 0, 0])])

    def test_threshold_validated(self):
        with pytest.raises(ConfigError):
            Agent(id=0, detection_threshold=0)


class TestSegmentSphereEntry:
    def test_starts_inside(self):
        s = segment_sphere_entry(np.zeros(3), np.array([1.0, 0, 0]),
                                 np.zeros(3), 0.5)
        assert s == 0.0

    def test_crossing(self):
        s = segment_sphere_entry(np.array([-2.0, 0, 0]),
                                 np.array([2.0, 0, 0]), np.zeros(3), 1.0)
        assert s == pytest.approx(0.25, abs=1e-12)

    def test_miss_and_degenerate(self):
        assert segment_sphere_entry(np.array([-2.0, 5, 0]),
                                    np.array([2.0, 5, 0]),
                                    np.zeros(3), 1.0) is None
        x = np.array([3.0, 0, 0])
        assert segment_sphere_entry(x, x, np.zeros(3), 1.0) is None

    def test_absorb_check_gain(self):
        rng = np.random.default_rng(0)
        assert absorb_check([-2, 0, 0], [2, 0, 0], [0, 0, 0], 1.0, 1.0, rng)
        assert not absorb_check([-2, 0, 0], [2, 0, 0], [0, 0, 0], 1.0, 0.0,
                                rng)
        assert not absorb_check([-2, 5, 0], [2, 5, 0], [0, 0, 0], 1.0, 1.0,
                                rng)


class TestDoseAndInfection:
    def test_dose_counts_infectious_only(self):
        a = Agent(id=0, detection_threshold=2)
        accumulate_dose(a, False)
        assert a.dose == 0
        accumulate_dose(a, True)
        assert a.dose == 1
        assert not infection_decision(a)
        accumulate_dose(a, True)
        assert infection_decision(a)

    def test_infection_latches(self):
        a = Agent(id=0, detection_threshold=1)
        accumulate_dose(a, True)
        infection_decision(a)
        a.dose = 0
        assert infection_decision(a)

    def test_aperture_validation(self):
        with pytest.raises(ConfigError):
            Aperture(ApertureKind.FACE, [0, 0, 0], radius=0.0)
        with pytest.raises(ConfigError):
            Aperture(ApertureKind.FACE, [0, 0, 0], gain=1.5)


class TestEngine:
    def test_seed_required(self):
        cfg = make_config(lambda d: d["run"].pop("seed"))
        with pytest.raises(ConfigError):
            run(cfg)

    def test_end_to_end_absorption(self):
        result = run(make_config())
        assert result.absorptions, "receiver directly downstream must absorb"
        assert result.depositions
        assert result.blocked_count == 0
        report = ledger_check(result)
        assert report["total"]["emitted"] == 200
        # infectious absorptions drive the dose; 500 um droplets are
        # essentially always infectious at the default loading
        doses = result.dose_traces[1]
        assert doses and doses[-1][1] >= 5
        assert result.infections[1] is True
        assert result.infections[0] is True  # emitter was infected at start
        assert len(result.symbols) == 1
        assert result.symbols[0].event_kind is RespiratoryEventKind.COUGH
        assert result.symbols[0].concentration_level == 1  # 200 in [100,1000)

    def test_records_sorted_and_consistent(self):
        result = run(make_config())
        dep_keys = [(r.t, r.particle_id) for r in result.depositions]
        assert dep_keys == sorted(dep_keys)
        ids = [r.particle_id for r in result.depositions] + \
              [r.particle_id for r in result.absorptions]
        assert len(ids) == len(set(ids))

    def test_no_self_absorption(self):
        def mutate(d):
            # the emitter wears an aperture engulfing its own mouth
            d["agents"][0]["apertures"] = [
                {"kind": "face", "offset": [0.0, 0.0, 1.64], "radius": 0.6,
                 "gain": 1.0}]
            d["agents"][1]["apertures"] = []
        result = run(make_config(mutate))
        assert not result.absorptions
        assert ledger_check(result)["total"]["absorbed"] == 0

    def test_mask_blocks(self):
        def mutate(d):
            d["agents"][0]["mask"] = {"enabled": True, "efficiency": 1.0}
        result = run(make_config(mutate))
        assert result.blocked_count == 200
        assert not result.depositions and not result.absorptions
        assert result.events[0].emitted == 200

    def test_ledger_tamper_detected(self):
        result = run(make_config())
        result.events[0].deposited += 1
        with pytest.raises(ConservationError):
            ledger_check(result)

    def test_zero_gain_aperture_is_bit_transparent(self):
        def add_transparent(d):
            d["agents"][1]["apertures"].append(
                {"kind": "hand", "offset": [0.0, 0.0, 1.0], "radius": 2.0,
                 "gain": 0.0})
        base = run(make_config())
        with_t = run(make_config(add_transparent))
        assert len(base.depositions) == len(with_t.depositions)
        for a, b in zip(base.depositions, with_t.depositions):
            assert (a.particle_id, a.x, a.y, a.t) == (b.particle_id, b.x,
                                                      b.y, b.t)
        assert [r.particle_id for r in base.absorptions] == \
            [r.particle_id for r in with_t.absorptions]

    def test_thread_count_invariance(self, monkeypatch):
        results = []
        for n in ("1", "8"):
            monkeypatch.setenv("AEROCOMM_THREADS", n)
            # >1 chunk of 1024 so the pool actually splits the work
            results.append(run(make_config(
                lambda d: d["emission"]["particles_per_event"].update(
                    cough=1500))))
        a, b = results
        assert [(r.particle_id, r.x, r.y, r.t) for r in a.depositions] == \
            [(r.particle_id, r.x, r.y, r.t) for r in b.depositions]
        assert [(r.particle_id, r.t) for r in a.absorptions] == \
            [(r.particle_id, r.t) for r in b.absorptions]

    def test_bad_thread_env(self, monkeypatch):
        monkeypatch.setenv("AEROCOMM_THREADS", "many")
        with pytest.raises(ConfigError):
            run(make_config())

    def test_breath_process_conservation(self):
        def mutate(d):
            d["run"].update(duration=10.0, seed=3)
            d["emission"]["particles_per_event"] = {"cough": 200, "breath": 20}
            d["agents"][0]["events"] = {"breath_rate_per_min": 30.0}
        result = run(make_config(mutate))
        assert len(result.events) == 5  # breaths at 2,4,6,8,10 s
        report = ledger_check(result)
        assert report["total"]["emitted"] == 100

    def test_identical_seeds_identical_runs(self):
        a = run(make_config())
        b = run(make_config())
        assert [(r.particle_id, r.x, r.y, r.t) for r in a.depositions] == \
            [(r.particle_id, r.x, r.y, r.t) for r in b.depositions]
