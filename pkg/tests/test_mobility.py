import math

import numpy as np
import pytest

from dynmap.mobility import (GridMapSpec, ResamplingError, TraceError, TraceSchemaError, TraceSet, derive_state,
                             load_fcd_trace, rectilinear_trace, sumo_angle_to_heading, synth_trips)
from dynmap.motion import ctra_predict


def _fcd(tmp_path, steps, name="fcd.xml"):
    body = ["<fcd-export>"]
    for t, vehicles in steps:
        body.append(f'  <timestep time="{t}">')
        for v in vehicles:
            attrs = " ".join(f'{k}="{val}"' for k, val in v.items())
            body.append(f"    <vehicle {attrs}/>")
        body.append("  </timestep>")
    body.append("</fcd-export>")
    p = tmp_path / name
    p.write_text("\n".join(body) + "\n")
    return p


def _veh(vid, x, y, angle=90.0, speed=10.0):
    return {"id": vid, "x": x, "y": y, "angle": angle, "speed": speed}


# ----- FCD import -----

def test_passthrough_three_steps(tmp_path):
    p = _fcd(tmp_path, [(0.0, [_veh("7", 0, 0)]), (0.1, [_veh("7", 1, 0)]), (0.2, [_veh("7", 2, 0)])])
    tr = load_fcd_trace(p, 0.1)
    assert tr.n_slots == 3 and tr.ids.tolist() == [7]
    assert np.allclose(tr.states[:, 0, 0], [0, 1, 2])
    assert np.allclose(tr.states[:, 0, 2], 0.0)
    assert np.allclose(tr.states[:, 0, 3], 10.0)


@pytest.mark.parametrize("angle,heading", [(0, math.pi / 2), (90, 0.0), (180, -math.pi / 2), (270, math.pi),
                                           (45, math.pi / 4)])
def test_sumo_angle_convention(angle, heading):
    assert sumo_angle_to_heading(angle) == pytest.approx(heading)


def test_coarse_trace_interpolated(tmp_path):
    steps = [(float(t), [_veh("1", 10.0 * t, 5.0)]) for t in range(4)]
    tr = load_fcd_trace(_fcd(tmp_path, steps), 0.1)
    assert tr.n_slots == 31
    assert np.allclose(tr.states[:, 0, 0], np.arange(31) * 1.0)
    assert np.allclose(tr.states[:, 0, 1], 5.0)
    assert np.allclose(tr.states[:, 0, 4], 0.0) and np.allclose(tr.states[:, 0, 5], 0.0)


def test_entry_and_exit(tmp_path):
    steps = [(0.0, [_veh("1", 0, 0)]), (0.1, [_veh("1", 1, 0), _veh("2", 50, 0)]), (0.2, [_veh("2", 51, 0)])]
    tr = load_fcd_trace(_fcd(tmp_path, steps), 0.1)
    assert tr.present.tolist() == [[True, False], [True, True], [False, True]]
    assert tr.entry_slot(1) == 1 and tr.exit_slot(0) == 1


def test_malformed_xml_reports_line(tmp_path):
    p = tmp_path / "bad.xml"
    p.write_text('<fcd-export>\n  <timestep time="0.0">\n    <vehicle id="1" x="0"\n</fcd-export>\n')
    with pytest.raises(TraceError, match=r"bad.xml:\d+:\d+"):
        load_fcd_trace(p, 0.1)


def test_missing_attribute_named(tmp_path):
    p = _fcd(tmp_path, [(0.0, [{"id": "1", "x": 0, "y": 0, "angle": 0}])])
    with pytest.raises(TraceSchemaError, match="speed"):
        load_fcd_trace(p, 0.1)


def test_misaligned_steps_rejected(tmp_path):
    steps = [(0.0, [_veh("1", 0, 0)]), (0.15, [_veh("1", 1, 0)]), (0.4, [_veh("1", 2, 0)])]
    with pytest.raises(ResamplingError):
        load_fcd_trace(_fcd(tmp_path, steps), 0.1)


def test_csv_roundtrip(tmp_path):
    tr = synth_trips(GridMapSpec(), 4, 20, seed=3)
    tr.to_csv(tmp_path / "t.csv")
    back = TraceSet.from_csv(tmp_path / "t.csv")
    assert np.array_equal(back.states, tr.states) and np.array_equal(back.present, tr.present)
    assert back.T_t == tr.T_t and back.area_km2 == tr.area_km2
    (tmp_path / "bad.csv").write_text("slot,id,x,y\n0,1,0,0\n")
    with pytest.raises(TraceSchemaError, match="h"):
        TraceSet.from_csv(tmp_path / "bad.csv")


# ----- state derivation -----

def test_derive_rectilinear():
    t = np.arange(20) * 0.1
    s = derive_state(np.column_stack([3 * t, 4 * t]), 0.1)
    assert np.allclose(s[:, 3], 5.0)
    assert np.all(s[:, 4] == 0.0) and np.all(s[:, 5] == 0.0)
    assert np.allclose(s[:, 2], math.atan2(4, 3))


def test_derive_circle_turn_rate():
    R, u = 20.0, 5.0
    th = u / R * np.arange(60) * 0.1
    s = derive_state(np.column_stack([R * np.cos(th), R * np.sin(th)]), 0.1)
    assert np.allclose(s[2:-2, 5], u / R, rtol=0.02)


def test_derive_stationary_holds_heading():
    p = np.array([[0, 0], [1, 1], [2, 2], [2, 2], [2, 2], [2, 2]], dtype=float)
    s = derive_state(p, 0.1)
    assert np.allclose(s[-1, 2], math.pi / 4) and s[-1, 5] == 0.0


def test_derive_needs_three_samples():
    with pytest.raises(ValueError):
        derive_state(np.zeros((2, 2)), 0.1)


# ----- synthetic grid -----

def test_grid_spec_defaults():
    spec = GridMapSpec()
    assert spec.area_km2 == pytest.approx(0.5168, rel=1e-4)
    assert GridMapSpec.for_area(0.5168).block == pytest.approx(spec.block, rel=1e-5)
    with pytest.raises(ValueError):
        GridMapSpec(p_straight=0.9)


def test_single_straight_street():
    spec = GridMapSpec(block=20000.0, n_nodes=2, speed_frac=(1.0, 1.0))
    tr = synth_trips(spec, 1, 300, seed=1)
    h, u = tr.states[:, 0, 2], tr.states[:, 0, 3]
    assert np.ptp(h) == 0.0
    assert np.all(np.diff(u) >= -1e-12)
    assert u[-1] == pytest.approx(spec.v_max)


def test_urban_scenario_properties():
    tr = synth_trips(GridMapSpec(), 62, 1000, seed=7)
    assert tr.density() == pytest.approx(120.0, rel=0.01)
    s = tr.states
    assert s[..., 3].max() <= 13.89 + 1e-9
    turning = np.abs(s[..., 5]) > 0
    assert turning.any() and np.all(s[..., 3][turning] <= 5.0 + 1e-9)
    step = np.hypot(*np.diff(s[..., :2], axis=0).transpose(2, 0, 1))
    assert step.max() <= 13.89 * 0.1 + 1e-6
    assert np.all((s[..., :2] >= -1e-9) & (s[..., :2] <= GridMapSpec().side + 1e-9))


def test_same_seed_same_trace():
    a = synth_trips(GridMapSpec(), 5, 50, seed=11)
    b = synth_trips(GridMapSpec(), 5, 50, seed=11)
    c = synth_trips(GridMapSpec(), 5, 50, seed=12)
    assert np.array_equal(a.states, b.states)
    assert not np.array_equal(a.states, c.states)


def test_trace_consistent_with_motion_model():
    tr = synth_trips(GridMapSpec(), 10, 300, seed=5)
    errs = []
    for t in range(tr.n_slots - 1):
        for k in range(tr.n_vehicles):
            nxt = ctra_predict(tr.states[t, k], 0.1)
            errs.append(math.hypot(nxt.x - tr.states[t + 1, k, 0], nxt.y - tr.states[t + 1, k, 1]))
    assert np.percentile(errs, 99) < 0.5


def test_rectilinear_helper():
    tr = rectilinear_trace(3, 10, speed=5.0)
    assert np.allclose(tr.states[9, :, 0], 4.5)
    assert tr.present.all()
