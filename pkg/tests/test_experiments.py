import math
import warnings

import numpy as np
import pytest

from chirpdnp.errors import WindowCoversZQ, WindowTooNarrow
from chirpdnp.experiments import (
    DnpProfile,
    EprLine,
    chirp_initial_state,
    classify,
    classify_outcome,
    grid_points,
    ise_trajectory,
    run_ase,
    run_chirp_single,
    run_epr_line,
    run_ise,
    scan_parameters,
    sweep_landmarks,
)
from chirpdnp.hamiltonians import (
    ChirpPulse,
    SpinSystemParams,
    effective_field,
    lz_factor,
    se_coupling,
)
from chirpdnp.operators import reduce_subspace, rotate_electron, spin_half_operators
from chirpdnp.propagation import OBSERVABLE_NAMES, IntegratorConfig, Trajectory

CFG = IntegratorConfig(dt=0.02, sample_stride=500)
P9 = SpinSystemParams(omega0n=100.0, B=2.25)


def fig9_pulse(w1, **kw):
    return ChirpPulse(w1, -200.0, 200.0, 1.0, **kw)


# -- EPR lines ---------------------------------------------------------------

def test_epr_line_normalises_and_sorts():
    line = EprLine.explicit([3.0, -1.0, 2.0], [1.0, 2.0, 1.0])
    assert np.all(np.diff(line.offsets) > 0)
    assert line.weights.sum() == pytest.approx(1.0)
    assert line.weights[0] == pytest.approx(0.5)


@pytest.mark.parametrize(
    "line",
    [
        EprLine.gaussian(20.0, 21),
        EprLine.uniform(-50, 50, 5),
        EprLine.random(30.0, 10, seed=4),
        EprLine.default_for(ChirpPulse(8, -300, 300, 1.5)),
    ],
)
def test_epr_line_invariants(line):
    assert np.all(line.weights >= 0)
    assert line.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(line.offsets) >= 0)


def test_epr_line_default_fits_window():
    line = EprLine.default_for(ChirpPulse(8, -300, 300, 1.5), n=21)
    assert line.offsets[0] == pytest.approx(-300) and line.offsets[-1] == pytest.approx(300)
    assert line.weights[10] == line.weights.max()


def test_random_line_reproducible():
    a, b = EprLine.random(30.0, 10, seed=9), EprLine.random(30.0, 10, seed=9)
    assert np.array_equal(a.offsets, b.offsets)


def test_epr_line_rejects_bad_weights():
    with pytest.raises(ValueError):
        EprLine.explicit([0.0, 1.0], [1.0, -1.0])
    with pytest.raises(ValueError):
        EprLine.explicit([], [])
    with pytest.raises(ValueError):
        EprLine.explicit([0.0, 1.0], [0.0, 0.0])


# -- single electron ---------------------------------------------------------

def test_chirp_initial_states():
    s = spin_half_operators()
    assert np.allclose(chirp_initial_state("z"), s.z)
    phi = math.radians(45)
    assert np.allclose(chirp_initial_state("coherence", phi), math.sin(phi) * s.x + math.cos(phi) * s.y)
    with pytest.raises(ValueError):
        chirp_initial_state("w")


def test_two_packets_both_inverted():
    pulse = ChirpPulse(4.0, -600, 600, 1.5)
    tr = run_chirp_single(pulse, [-200.0, 200.0], cfg=IntegratorConfig(sample_stride=1000))
    for pk in tr.meta["packets"]:
        assert pk["Sz"] == pytest.approx(-0.5, abs=5e-4)
    assert tr.final("Sz") == pytest.approx(-0.5, abs=5e-4)


def test_chirp_needs_a_packet():
    with pytest.raises(ValueError):
        run_chirp_single(ChirpPulse(4.0, -10, 10, 1.0), [])


# -- classification ----------------------------------------------------------

@pytest.mark.parametrize(
    "after, final, expected",
    [
        (-0.5, -0.9, "ISE"),
        (-0.5, -0.1, "DSE"),
        (-0.5, 0.3, "DSE"),
        (-0.5, -0.49, "NONE"),
        (-0.5, 0.7, "NONE"),
        (0.0, 0.0, "NONE"),
    ],
)
def test_classify_rule(after, final, expected):
    assert classify(after, final) == expected


def test_flat_zero_trajectory_is_none():
    pulse = fig9_pulse(25.0)
    t = np.linspace(0, pulse.duration, 101)
    tr = Trajectory(times=t, observables={k: np.zeros_like(t) for k in OBSERVABLE_NAMES})
    rep = classify_outcome(tr, P9, pulse)
    assert rep.classification == "NONE"
    assert rep.predicted == "NONE"


def test_no_pseudosecular_coupling_gives_none():
    tr, rep = run_ise(fig9_pulse(25.15), SpinSystemParams(100.0, B=0.0), CFG)
    assert abs(rep.iz_final) < 1e-12
    assert rep.classification == "NONE"


def test_narrow_window_warns_and_gives_none():
    pulse = ChirpPulse(25.0, -150, -50, 1.0)
    with pytest.warns(WindowTooNarrow):
        _, rep = run_ise(pulse, P9, CFG)
    assert rep.classification == "NONE"


def test_landmarks_order():
    m = sweep_landmarks(fig9_pulse(25.0), P9)
    assert m["first_kind"] == "DQ" and m["second_kind"] == "ZQ"
    assert m["first"] < m["sq"] < m["second"]
    flipped = sweep_landmarks(fig9_pulse(25.0).reversed(), P9)
    assert flipped["first_kind"] == "ZQ"


@pytest.mark.parametrize("w1, expected", [(25.15, "ISE"), (25.0, "DSE")])
def test_fig9_pair(w1, expected):
    _, rep = run_ise(fig9_pulse(w1), P9, CFG)
    assert rep.classification == expected
    assert rep.predictor_agrees


@pytest.mark.parametrize("w1", [25.0, 25.13])
@pytest.mark.parametrize(
    "variant",
    ["negative_B", "flipped_sign", "reversed", "phase"],
)
def test_predictor_orientation_invariance(w1, variant):
    params, pulse = P9, fig9_pulse(w1)
    if variant == "negative_B":
        params = SpinSystemParams(100.0, B=-2.25)
    elif variant == "flipped_sign":
        params = SpinSystemParams(100.0, B=2.25, nuclear_sign=1)
    elif variant == "reversed":
        pulse = pulse.reversed()
    else:
        pulse = fig9_pulse(w1, phase=0.7)
    _, rep = run_ise(pulse, params, CFG)
    assert rep.classification in ("ISE", "DSE")
    assert rep.predictor_agrees


def test_predictor_concordance_on_random_grid():
    rng = np.random.default_rng(2024)
    agree = total = 0
    while total < 30:
        w1, b, k = rng.uniform(10, 30), rng.uniform(1, 3), rng.uniform(0.5, 2.0)
        params = SpinSystemParams(100.0, B=b)
        if lz_factor(se_coupling(params, w1), k) > 1:
            continue
        _, rep = run_ise(ChirpPulse(w1, -200, 200, k), params, IntegratorConfig(dt=0.02, sample_stride=10**9))
        if rep.classification == "NONE":
            continue
        total += 1
        agree += rep.predictor_agrees
    assert agree / total >= 0.9


def test_adiabatic_se_reverts_polarization():
    params = SpinSystemParams(100.0, B=10.0)
    pulse = fig9_pulse(25.0)
    assert lz_factor(se_coupling(params, 25.0), pulse.rate_k) >= 5
    _, rep = run_ise(pulse, params, CFG)
    assert abs(rep.iz_after_dq) > 0.9
    assert abs(rep.iz_final) < 0.05 * abs(rep.iz_after_dq)


# -- segment invariants ------------------------------------------------------

def _field_frame(rho, theta):
    return rotate_electron(rho, -theta)


def test_zq_block_decoupled_before_dq_crossing():
    # weak coupling: off-resonant ZQ leakage ~ c / (offset + omega0n) stays below 1e-6
    params = SpinSystemParams(100.0, B=0.02)
    pulse = ChirpPulse(1.0, -200, 200, 1.0)
    tr = ise_trajectory(pulse, params, IntegratorConfig(dt=0.01, sample_stride=50), keep_states=True)
    m = sweep_landmarks(pulse, params)
    width = max(se_coupling(params, pulse.omega1), math.sqrt(pulse.rate_k)) / pulse.rate_k
    assert m["first"] >= 5 * width
    _, theta = effective_field(tr.times, pulse)
    sel = np.where(tr.times <= m["first"] - 5 * width)[0]
    zq0 = reduce_subspace(_field_frame(tr.states[0], theta[0]), "ZQ")
    dev = max(np.abs(reduce_subspace(_field_frame(tr.states[i], theta[i]), "ZQ") - zq0).max() for i in sel)
    assert dev < 1e-6


def test_zq_leakage_bounded_at_strong_drive():
    pulse = fig9_pulse(25.15)
    tr = ise_trajectory(pulse, P9, IntegratorConfig(dt=0.01, sample_stride=50), keep_states=True)
    m = sweep_landmarks(pulse, P9)
    _, theta = effective_field(tr.times, pulse)
    sel = np.where(tr.times <= m["first"] - 5 * math.sqrt(pulse.rate_k) / pulse.rate_k)[0]
    zq0 = reduce_subspace(_field_frame(tr.states[0], theta[0]), "ZQ")
    dev = max(np.abs(reduce_subspace(_field_frame(tr.states[i], theta[i]), "ZQ") - zq0).max() for i in sel)
    c = se_coupling(P9, pulse.omega1)
    # first-order leakage estimate: c over the smallest ZQ detuning seen
    assert dev < 3 * c / P9.omega0n


def _to_pole(rho, theta):
    # rotate the electron so its effective field sits on the nearer lab pole
    return rotate_electron(rho, -theta if theta < math.pi / 2 else math.pi - theta)


@pytest.mark.parametrize("w1, k", [(25.15, 1.0), (25.0, 1.0), (3.172, 2.2), (10.0, 1.0)])
def test_sq_passage_swaps_dq_into_zq(w1, k):
    pulse = ChirpPulse(w1, -200, 200, k)
    assert lz_factor(w1, k) > 40
    m = sweep_landmarks(pulse, P9)
    tb, ta = (m["first"] + m["sq"]) / 2, (m["sq"] + m["second"]) / 2
    tr = ise_trajectory(pulse, P9, IntegratorConfig(dt=0.01, sample_stride=10**9), keep_states=True, record_at=[tb, ta])
    (ib, ia) = tr.index_at(tb), tr.index_at(ta)
    _, th = effective_field(np.array([tb, ta]), pulse)
    dq = reduce_subspace(_to_pole(tr.states[ib], th[0]), "DQ")
    zq = reduce_subspace(_to_pole(tr.states[ia], th[1]), "ZQ")
    tol = 0.05 * np.abs(dq).max()
    # |aa>,|bb> land on |ba>,|ab>: populations map index-reversed
    assert abs(dq[0, 0] - zq[1, 1]) < tol
    assert abs(dq[1, 1] - zq[0, 0]) < tol
    assert abs(abs(dq[0, 1]) - abs(zq[0, 1])) < tol


# -- EPR line ----------------------------------------------------------------

EPR_PULSE = ChirpPulse(8.0, -300, 300, 1.5)
EPR_P = SpinSystemParams(146.8, B=2.25)


def test_single_packet_line_equals_run_ise():
    cfg = IntegratorConfig(dt=0.02, sample_stride=10**9)
    prof = run_epr_line(EPR_PULSE, EPR_P, EprLine.explicit([12.0]), cfg)
    tr, rep = run_ise(EPR_PULSE, EPR_P.with_packet(12.0), cfg)
    assert prof.iz_final[0] == tr.final("Iz")
    assert prof.sz_final[0] == tr.final("Sz")
    assert prof.aggregate == tr.final("Iz")
    assert prof.classifications[0] == rep.classification


def test_packet_outside_window_stays_unpolarised():
    cfg = IntegratorConfig(dt=0.02, sample_stride=10**9)
    prof = run_epr_line(ChirpPulse(8.0, -100, 100, 5.0), EPR_P, EprLine.explicit([2000.0]), cfg)
    assert abs(prof.iz_final[0]) < 1e-4


def test_aggregate_is_weighted_sum_and_order_free():
    cfg = IntegratorConfig(dt=0.05, sample_stride=10**9)
    pulse = ChirpPulse(8.0, -300, 300, 6.0)
    offs, w = [-40.0, 0.0, 25.0, 60.0], [0.1, 0.4, 0.3, 0.2]
    a = run_epr_line(pulse, EPR_P, EprLine.explicit(offs, w), cfg)
    b = run_epr_line(pulse, EPR_P, EprLine.explicit(offs[::-1], w[::-1]), cfg)
    assert a.aggregate == b.aggregate
    assert a.aggregate == pytest.approx(float(np.sum(a.weights * a.iz_final)), abs=1e-12)
    assert len(a.iz_final) == 4


def test_parallel_epr_matches_serial():
    cfg = IntegratorConfig(dt=0.05, sample_stride=10**9)
    pulse = ChirpPulse(8.0, -300, 300, 6.0)
    line = EprLine.uniform(-50, 50, 3)
    a = run_epr_line(pulse, EPR_P, line, cfg)
    b = run_epr_line(pulse, EPR_P, line, cfg, workers=2)
    assert np.array_equal(a.iz_final, b.iz_final)


def test_profile_aggregate_skips_failed_packets():
    prof = DnpProfile(
        offsets=np.array([0.0, 1.0]),
        weights=np.array([0.5, 0.5]),
        iz_final=np.array([-0.2, np.nan]),
        sz_final=np.array([0.0, np.nan]),
        classifications=["ISE", "NONE"],
        errors={1.0: "boom"},
    )
    assert prof.aggregate == pytest.approx(-0.1)


# -- ASE ---------------------------------------------------------------------

ASE_PULSE = ChirpPulse(3.172, -130.0, -70.0, 2.2)


def test_ase_refuses_zq_window():
    with pytest.raises(WindowCoversZQ):
        run_ase(fig9_pulse(3.172), P9, 2)


def test_ase_single_sweep_equals_truncated_ise():
    cfg = IntegratorConfig(dt=0.02)
    series = run_ase(ASE_PULSE, P9, 1, cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", WindowTooNarrow)
        tr, _ = run_ise(ASE_PULSE, P9, cfg)
    assert series[0] == pytest.approx(tr.final("Iz"), abs=1e-12)


def test_ase_delay_runs_and_changes_little_without_t2():
    cfg = IntegratorConfig(dt=0.02)
    a = run_ase(ASE_PULSE, P9, 3, cfg)
    b = run_ase(ASE_PULSE, P9, 3, cfg, delay=1.0)
    assert a[0] == b[0]
    assert len(b) == 3
    with pytest.raises(ValueError):
        run_ase(ASE_PULSE, P9, 0, cfg)


# -- scans -------------------------------------------------------------------

def test_grid_points_cartesian():
    pts = grid_points({"omega1": [1, 2], "rate_k": [3, 4, 5]})
    assert len(pts) == 6 and pts[0] == {"omega1": 1, "rate_k": 3}
    with pytest.raises(ValueError):
        grid_points({})
    with pytest.raises(ValueError):
        grid_points({"colour": [1]})


def test_scan_mixed_map_and_single_point():
    pts = scan_parameters({"omega1": [25.0, 25.15]}, P9, fig9_pulse(25.0), CFG)
    assert [p.classification for p in pts] == ["DSE", "ISE"]
    _, rep = run_ise(fig9_pulse(25.15), P9, CFG)
    assert pts[1].report.iz_final == rep.iz_final


def test_scan_collects_point_errors():
    pts = scan_parameters({"omega1": [25.0, 150.0]}, P9, fig9_pulse(25.0), CFG)
    assert pts[0].error is None
    assert pts[1].report is None and "omega1" in pts[1].error


def test_scan_beta_uses_dipolar_form():
    pts = scan_parameters({"beta": [math.radians(45)]}, P9, fig9_pulse(25.0), CFG, dipolar_d=1.5)
    assert pts[0].report is not None
