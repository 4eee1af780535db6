"""Constant-control evolution, schedules and their execution."""
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from magctl.core import WaveFunction, make_grid, projective_distance
from magctl.hamiltonian import quadratic_system, torus_trig_system
from magctl.oracles import apply_free_evolution, apply_phase
from magctl.propagator import (
    KickMode,
    Schedule,
    Segment,
    evolve_constant,
    execute,
    trotter_pair,
)

TORUS = make_grid("torus", 1, 256)


def _state(seed=0, g=TORUS, modes=6):
    rng = np.random.default_rng(seed)
    x = g.axes[0]
    vals = sum((rng.standard_normal() + 1j * rng.standard_normal()) * np.exp(1j * k * x)
               for k in range(-modes, modes + 1))
    return WaveFunction.normalized(g, vals)


def _system():
    return torus_trig_system(TORUS, A=["0.5*sin(x)"], V="cos(x)")


def test_zero_time_identity():
    psi = _state()
    out = evolve_constant(_system(), [1.0, 2.0], 0.0, psi)
    assert projective_distance(out, psi) <= 1e-14


def test_flat_drift_is_free_evolution():
    sys = torus_trig_system(TORUS)
    psi = _state()
    for method in ("dense_eig", "krylov"):
        out = evolve_constant(sys, [0, 0], 0.3, psi, method=method)
        assert np.max(np.abs(out.values - apply_free_evolution(psi, 0.3).values)) <= 1e-9


def test_dense_and_krylov_agree():
    sys = _system()
    rng = np.random.default_rng(5)
    psi = WaveFunction.normalized(TORUS, rng.standard_normal(256) + 1j * rng.standard_normal(256))
    a = evolve_constant(sys, [3.0, -1.0], 0.05, psi, method="dense_eig")
    b = evolve_constant(sys, [3.0, -1.0], 0.05, psi, method="krylov")
    assert np.max(np.abs(a.values - b.values)) <= 1e-7
    assert abs(a.norm() - 1) <= 1e-10
    assert abs(b.norm() - 1) <= 1e-8


def test_unknown_method():
    with pytest.raises(ValueError):
        evolve_constant(_system(), [0, 0], 0.1, _state(), method="magic")


def test_negative_duration_rejected():
    with pytest.raises(ValueError):
        Segment.evolve(-1.0, [0, 0])


# ---- execution -----------------------------------------------------------------------


def test_empty_schedule():
    psi = _state()
    out, T = execute(_system(), Schedule(), psi)
    assert T == 0.0 and np.array_equal(out.values, psi.values)


def test_global_phase_pi():
    psi = _state()
    out, T = execute(_system(), Schedule((Segment.global_phase(np.pi),)), psi)
    assert T == 0.0
    # exp(i pi) carries a rounding-level imaginary part
    assert projective_distance(out, psi) <= 1e-15
    np.testing.assert_allclose(out.values, -psi.values, atol=1e-15)


def test_ideal_kick_is_phase():
    psi = _state()
    out, _ = execute(_system(), Schedule((Segment.kick([0.7, 0.3]),)), psi)
    target = apply_phase(psi, 0.7 * np.sin(TORUS.axes[0]) + 0.3 * np.cos(TORUS.axes[0]))
    assert np.max(np.abs(out.values - target.values)) <= 1e-14


def test_pulsed_kick_order_one():
    sys = _system()
    psi = _state()
    sched = Schedule((Segment.kick([0.7, 0.3]),))
    ideal, _ = execute(sys, sched, psi)
    errs = []
    for eps in (1e-2, 1e-3, 1e-4):
        out, T = execute(sys, sched, psi, kick_mode=f"pulsed:{eps}")
        assert T == pytest.approx(eps)
        errs.append(projective_distance(out, ideal))
    order = np.polyfit(np.log([1e-2, 1e-3, 1e-4]), np.log(errs), 1)[0]
    assert order == pytest.approx(1.0, abs=0.3)
    assert errs[0] > errs[1] > errs[2]


def test_total_duration_accounting():
    sched = Schedule((Segment.evolve(0.1, [0, 0]), Segment.kick([1, 0]), Segment.evolve(0.25, [1, 1]),
                      Segment.field_kick(np.zeros(TORUS.shape)), Segment.global_phase(0.3)))
    assert sched.total_duration("ideal") == pytest.approx(0.35)
    # only coefficient kicks become pulses
    assert sched.total_duration("pulsed:0.01") == pytest.approx(0.36)
    _, T = execute(_system(), sched, _state())
    assert T == sched.total_duration("ideal")


def test_trace_drifts():
    trace = []
    sched = Schedule((Segment.evolve(0.1, [5, -2]), Segment.kick([1, 0]), Segment.evolve(0.2, [0, 0])))
    execute(_system(), sched, _state(), trace=trace)
    assert [t["kind"] for t in trace] == ["evolve", "kick", "evolve"]
    assert all(t["method"] == "dense_eig" for t in trace)
    assert max(t["drift"] for t in trace) <= 1e-10


def test_deterministic_and_thread_safe():
    sys = _system()
    sched = Schedule(tuple(Segment.evolve(0.01 * (i + 1), [np.sin(i), np.cos(i)]) for i in range(6)))
    psi = _state(2)
    ref, _ = execute(sys, sched, psi)
    with ThreadPoolExecutor(4) as ex:
        outs = list(ex.map(lambda _: execute(sys, sched, psi)[0], range(8)))
    for out in outs:
        assert np.array_equal(out.values, ref.values)


def test_kick_mode_parse():
    assert KickMode.parse("ideal").kind == "ideal"
    assert KickMode.parse("pulsed:1e-3").eps == 1e-3
    for bad in ("pulsed:0", "strong", "pulsed:-1"):
        with pytest.raises(ValueError):
            KickMode.parse(bad)


# ---- schedules -------------------------------------------------------------------------


def test_schedule_json_roundtrip():
    sched = Schedule((Segment.evolve(0.1, [1.5, -2.0], label="a"), Segment.kick([0.1, 0.2]),
                      Segment.field_kick(np.arange(4.0).reshape(2, 2)), Segment.global_phase(0.5)),
                     {"op": "test", "tau": 0.1})
    back = Schedule.from_json(sched.to_json())
    assert back.to_json() == sched.to_json()
    assert back.segments[2].kick_field.shape == (2, 2)
    assert back.global_phase == pytest.approx(0.5)


def test_schedule_version_checked():
    with pytest.raises(ValueError):
        Schedule.from_json('{"version": 99, "segments": []}')


def test_trotter_n1_is_concatenation():
    a = Schedule((Segment.kick([1, 0]),))
    b = Schedule((Segment.evolve(0.1, [0, 0]),))
    t = trotter_pair(a, b, 1)
    assert [s.kind for s in t] == ["kick", "evolve"]
    with pytest.raises(ValueError):
        trotter_pair(a, b, 0)


def test_trotter_commuting_pair():
    sys = _system()
    psi = _state()
    outs = []
    for n in (1, 2, 4, 8):
        a = Schedule((Segment.kick([0.5 / n, 0]),))
        b = Schedule((Segment.kick([0, -0.3 / n]),))
        outs.append(execute(sys, trotter_pair(a, b, n), psi)[0])
    for out in outs[1:]:
        assert np.max(np.abs(out.values - outs[0].values)) <= 1e-12


def test_quadratic_constant_control_is_phase_in_limit():
    g = make_grid("line", 1, 128, 8)
    sys = quadratic_system(g)
    x = g.axes[0]
    psi = WaveFunction.normalized(g, np.exp(-x**2))
    target = apply_phase(psi, 0.5 * x**2)
    errs = []
    for tau in (1e-2, 1e-3, 1e-4):
        out, _ = execute(sys, Schedule((Segment.evolve(tau, [-0.5 / tau, 0]),)), psi)
        errs.append(projective_distance(out, target))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-3
