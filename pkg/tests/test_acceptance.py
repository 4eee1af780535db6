"""End-to-end acceptance checks, one per criterion, on the built-in experiment configs.

Each experiment runs once per session. Every test prints one line
``criterion N: PASS|FAIL <detail>`` to the terminal and then asserts.
"""
import numpy as np
import pytest

from magctl.harness import load_config, run_experiment
from magctl.harness.experiments import fit_order

_CACHE: dict = {}


def report(name):
    if name not in _CACHE:
        _CACHE[name] = run_experiment(load_config(experiment=name))
    return _CACHE[name]


@pytest.fixture
def verdict(capsys):
    def say(n: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail

    return say


def _rows(rep, case):
    return [r for r in rep.rows if r.get("case") == case]


def _order(rows, key):
    return fit_order([r[key] for r in rows], [r["error"] for r in rows])["order"]


def _monotone(rows):
    e = [r["error"] for r in rows]
    return all(a > b for a, b in zip(e, e[1:]))


SCHEDULE_EXPERIMENTS = ("phase-conv", "gradsq-conv", "dilation-conv", "freeevo-conv", "translation-conv",
                        "gradientflow-conv", "demo-small-time", "obstruction")


def test_criterion_1_unitarity(verdict):
    worst_dense = worst_kry = worst_cum = 0.0
    flags_ok = True
    for name in SCHEDULE_EXPERIMENTS:
        rep = report(name)
        flags_ok &= all(v for k, v in rep.flags.items() if k.startswith("unitarity:"))
        for r in rep.rows:
            if r.get("status") != "ok":
                flags_ok = False
                continue
            worst_dense = max(worst_dense, r.get("max_drift_dense", r.get("max_drift", 0.0)) or 0.0)
            worst_kry = max(worst_kry, r.get("max_drift_krylov", 0.0) or 0.0)
            worst_cum = max(worst_cum, r.get("norm_drift", 0.0) or 0.0)
    ok = flags_ok and worst_dense <= 1e-10 and worst_kry <= 1e-8 and worst_cum <= 1e-8
    verdict(1, ok, f"dense {worst_dense:.2e} <= 1e-10, krylov {worst_kry:.2e} <= 1e-8, "
                   f"cumulative {worst_cum:.2e} <= 1e-8")


def test_criterion_2_identities(verdict):
    rep = report("identities")
    small = [r for r in rep.rows if r["expect"] == "small"]
    large = [r for r in rep.rows if r["expect"] == "large"]
    worst = max(r["residual"] for r in small)
    witness = min(r["residual"] for r in large)
    ok = rep.passed and worst <= 1e-6 and witness >= 1e-2 and len(small) >= 3
    verdict(2, ok, f"worst identity residual {worst:.2e} <= 1e-6, non-tangent witness {witness:.2e} >= 1e-2")


def test_criterion_3_phase(verdict):
    rows = _rows(report("phase-conv"), "main")
    fine = rows[-1]
    order = _order(rows, "tau")
    ok = (fine["tau"] == 1e-4 and fine["error"] <= 1e-3 and all(r["T_total"] == r["tau"] for r in rows)
          and abs(order - 1.0) <= 0.3)
    verdict(3, ok, f"error {fine['error']:.2e} <= 1e-3 at tau=1e-4, T_total = tau, order {order:.3f}")


def test_criterion_4_gradsq(verdict):
    rows = _rows(report("gradsq-conv"), "main")
    fine = rows[-1]
    order = _order(rows, "tau")
    ok = fine["tau"] == 1e-4 and fine["error"] <= 2e-2 and abs(order - 0.5) <= 0.2
    verdict(4, ok, f"error {fine['error']:.5f} <= 2e-2 at tau=1e-4, order {order:.3f}")


def test_criterion_5_dilation_free(verdict):
    dil = report("dilation-conv")
    tan, non = _rows(dil, "tangent"), _rows(dil, "non-tangent")
    free = _rows(report("freeevo-conv"), "main")
    ratio = non[-1]["error"] / tan[-1]["error"]
    ok = (_monotone(tan) and tan[-1]["error"] <= 5e-2 and ratio >= 10
          and _monotone(free) and free[-1]["error"] <= 5e-2)
    verdict(5, ok, f"dilation final {tan[-1]['error']:.2e}, non-tangent ratio {ratio:.1f} >= 10, "
                   f"free evolution final {free[-1]['error']:.2e}")


def test_criterion_6_trotter(verdict):
    rep = report("trotter-conv")
    parts = []
    ok = True
    for case in ("harmonic", "strip"):
        rows = _rows(rep, case)
        assert [r["n"] for r in rows] == [2, 4, 8, 16]
        order = fit_order([1 / r["n"] for r in rows], [r["error"] for r in rows])["order"]
        ok &= abs(order - 1.0) <= 0.3 and _monotone(rows)
        parts.append(f"{case} order {order:.3f}")
    verdict(6, ok, ", ".join(parts))


def test_criterion_7_gradient_flow(verdict):
    rep = report("gradientflow-conv")
    parts = []
    ok = True
    for case in ("stripped", "twisted"):
        rows = _rows(rep, case)
        ok &= _monotone(rows) and rows[-1]["error"] <= 5e-2
        parts.append(f"{case} final {rows[-1]['error']:.2e}")
    verdict(7, ok, ", ".join(parts))


def test_criterion_8_saturation(verdict):
    rep = report("saturate")
    trig = [r for r in rep.rows if r["algebra"] == "trig"]
    herm = [r for r in rep.rows if r["algebra"] == "hermite"]
    ok = (rep.passed and all(r["status"] == "ok" and r["exact"] for r in rep.rows)
          and max(r["depth"] for r in trig) <= 3 and {r["d"] for r in trig} == {1, 2}
          and max(r["grid_error"] for r in rep.rows) <= 1e-10 and len(herm) > 0)
    verdict(8, ok, f"{len(trig)} trig and {len(herm)} hermite targets, max trig depth "
                   f"{max(r['depth'] for r in trig)}, grid error {max(r['grid_error'] for r in rep.rows):.1e}")


def test_criterion_9_obstruction(verdict):
    rep = report("obstruction")
    inv = [r for r in rep.rows if r["case"] == "invariance"]
    con = [r for r in rep.rows if r["case"] == "contrast"]
    worst = max(r["residual"] for r in inv)
    ok = len(inv) == 20 and worst <= 1e-6 and con[0]["residual"] >= 1e-2
    verdict(9, ok, f"{len(inv)} schedules, worst Gaussian residual {worst:.2e} <= 1e-6, "
                   f"W2 pulse residual {con[0]['residual']:.2e} >= 1e-2")


def test_criterion_10_small_time(verdict):
    rows = _rows(report("demo-small-time"), "composite")
    first = rows[0]
    eps = np.array([r["eps"] for r in rows])
    T = np.array([r["T_total"] for r in rows])
    linear = np.allclose(T / eps, T[0] / eps[0], rtol=1e-9) and np.all(T <= eps * (1 + 1e-12))
    ok = first["eps"] == 0.01 and first["T_total"] <= 0.01 + 1e-12 and first["error"] <= 5e-2 and linear
    verdict(10, ok, f"error {first['error']:.2e} <= 5e-2 with T_total {first['T_total']:.4f} <= 0.01, "
                    f"T_total/eps constant {linear}")
