"""Density-matrix propagation, channels, and protocol plumbing."""

import math

import numpy as np
import pytest

from nvratchet import model, transfer_matrix
from nvratchet.dynamics import (
    DensityMatrix,
    Protocol,
    StepSizeError,
    SweepSegment,
    TimeSeries,
    TimeSeriesRecord,
    apply_dephasing,
    apply_p1_relaxation,
    choose_step_count,
    make_ratchet_protocol,
    nv_ms0_contrast,
    optical_repolarize,
    polarization,
    propagate_piecewise,
    propagate_segment,
    ratchet_initial_state,
    reduced_populations,
    run_protocol,
)
from nvratchet.spin_core import HilbertLayout

from conftest import random_density_matrix


def lz_survival_two_level(delta, beta, slope, half_window=0.5, n_steps=20000):
    """Engineered two-level sweep: numerically exact diabatic survival.

    H(B) = slope*(B)/2 * sigma_z + delta/2 * sigma_x swept from -W to +W.
    """
    Hz = np.diag([slope / 2.0, -slope / 2.0]).astype(complex)
    Hc = (delta / 2.0) * np.array([[0, 1], [1, 0]], dtype=complex)
    rho0 = np.zeros((2, 2), dtype=complex)
    rho0[1, 1] = 1.0  # lower diabatic state at B = -W
    duration = 2 * half_window / beta
    rho = propagate_piecewise(rho0, Hc, Hz, -half_window, half_window,
                              duration, n_steps)
    return float(rho[1, 1].real)


# --- Landau-Zener oracle ---------------------------------------------------


@pytest.mark.parametrize("channel,slope", [
    ("delta0", transfer_matrix.SLOPE_DELTA0),
    ("delta1", transfer_matrix.SLOPE_DELTA1),
])
def test_two_level_sweep_matches_lz_formula(channel, slope):
    delta = 0.1
    for beta in (0.5, 3.0, 20.0):
        survived = lz_survival_two_level(delta, beta, slope)
        predicted = transfer_matrix.lz_prob(delta, beta, channel)
        assert survived == pytest.approx(predicted, abs=0.02)


def test_sudden_limit_single_step():
    """One step across the crossing leaves diabatic populations unchanged."""
    slope = transfer_matrix.SLOPE_DELTA0
    Hz = np.diag([slope / 2.0, -slope / 2.0]).astype(complex)
    Hc = 0.05 * np.array([[0, 1], [1, 0]], dtype=complex)
    rho0 = np.diag([0.0, 1.0]).astype(complex)
    rho = propagate_piecewise(rho0, Hc, Hz, -0.5, 0.5, 1e-9, 1)
    assert rho[1, 1].real == pytest.approx(1.0, abs=1e-4)


def test_unitary_propagation_preserves_trace_and_purity(cluster3, rng):
    Hc, Hz = model.hamiltonian_terms(cluster3)
    rho0 = random_density_matrix(rng, cluster3.layout.dim)
    purity0 = np.trace(rho0 @ rho0).real
    rho = propagate_piecewise(rho0, Hc, Hz, 51.0, 51.2, 0.05, 500)
    assert np.trace(rho).real == pytest.approx(1.0, abs=1e-9)
    assert np.max(np.abs(rho - rho.conj().T)) < 1e-10
    assert np.trace(rho @ rho).real == pytest.approx(purity0, abs=1e-8)


# --- DensityMatrix ---------------------------------------------------------


def test_density_matrix_validate(cluster3, rng):
    layout = cluster3.layout
    good = DensityMatrix(random_density_matrix(rng, layout.dim), layout)
    good.validate()
    with pytest.raises(ValueError):
        DensityMatrix(np.eye(5) / 5, layout)
    bad_trace = DensityMatrix(np.eye(layout.dim, dtype=complex), layout)
    with pytest.raises(ValueError):
        bad_trace.validate()
    nonherm = np.eye(layout.dim, dtype=complex) / layout.dim
    nonherm[0, 1] = 1e-3
    with pytest.raises(ValueError):
        DensityMatrix(nonherm, layout).validate()
    negative = np.eye(layout.dim) / (layout.dim - 1.0)
    negative[0, 0] = -1e-4
    negative *= 1.0 / np.trace(negative)
    with pytest.raises(ValueError):
        DensityMatrix(negative.astype(complex), layout).validate()


def test_initial_states(cluster3):
    thermal = ratchet_initial_state(cluster3, "thermal")
    thermal.validate()
    assert nv_ms0_contrast(thermal) == pytest.approx(1.0)
    assert polarization(thermal, "P1") == pytest.approx(0.0)
    assert polarization(thermal, "H") == pytest.approx(0.0)
    active = ratchet_initial_state(cluster3, "active")
    assert polarization(active, "P1") == pytest.approx(1.0)
    assert polarization(active, "H") == pytest.approx(0.0)
    with pytest.raises(ValueError):
        ratchet_initial_state(cluster3, "hot")


def test_polarization_conventions(cluster3):
    layout = cluster3.layout
    # proton pure up: |m_NV=+1, P1 up, H up> product state
    idx = layout.basis_index((1.0, 0.5, 0.5))
    pops = np.zeros(layout.dim)
    pops[idx] = 1.0
    rho = DensityMatrix.from_populations(pops, layout)
    assert polarization(rho, "H") == pytest.approx(1.0)
    assert polarization(rho, "P1") == pytest.approx(1.0)
    assert polarization(rho, "NV") == pytest.approx(1.0)  # <Sz> for spin 1
    assert nv_ms0_contrast(rho) == pytest.approx(-0.5)
    mixed = DensityMatrix.maximally_mixed(layout)
    for site in ("NV", "P1", "H"):
        assert polarization(mixed, site) == pytest.approx(0.0)
    assert nv_ms0_contrast(mixed) == pytest.approx(0.0)


def test_reduced_populations_partial_trace(cluster3, rng):
    rho = DensityMatrix(random_density_matrix(rng, 12), cluster3.layout)
    for site in range(3):
        p = reduced_populations(rho, site)
        assert p.sum() == pytest.approx(1.0, abs=1e-10)


# --- channels --------------------------------------------------------------


def test_dephasing_projects_and_is_idempotent(cluster3, rng):
    H = model.assemble_hamiltonian(cluster3, 51.1)
    rho = DensityMatrix(random_density_matrix(rng, 12), cluster3.layout)
    once = apply_dephasing(rho, H)
    twice = apply_dephasing(once, H)
    assert np.max(np.abs(once.rho - twice.rho)) < 1e-12
    assert np.trace(once.rho).real == pytest.approx(1.0, abs=1e-12)
    # diagonal in the eigenbasis -> unchanged
    assert np.max(np.abs(apply_dephasing(once, H).rho - once.rho)) < 1e-12


def test_dephasing_halves_purity_of_equal_superposition(cluster3):
    H = model.assemble_hamiltonian(cluster3, 51.1)
    _, v = np.linalg.eigh(H)
    psi = (v[:, 3] + v[:, 7]) / math.sqrt(2)
    rho = DensityMatrix(np.outer(psi, psi.conj()), cluster3.layout)
    out = apply_dephasing(rho, H)
    assert out.purity() == pytest.approx(0.5, abs=1e-9)


def test_dephasing_keeps_degenerate_coherences():
    """Coherence inside a degenerate eigenspace carries no phase: keep it."""
    layout = HilbertLayout((("a", 0.5), ("b", 0.5)))
    sz = np.diag([0.5, -0.5])
    H = np.kron(sz, np.eye(2)).astype(complex)  # spin b fully degenerate
    psi = np.zeros(4, dtype=complex)
    psi[0] = psi[1] = 1 / math.sqrt(2)  # a up, b in (up+down)/sqrt(2)
    rho = DensityMatrix(np.outer(psi, psi.conj()), layout)
    out = apply_dephasing(rho, H)
    assert np.max(np.abs(out.rho - rho.rho)) < 1e-12


def test_dephasing_rejects_nonhermitian(cluster3):
    rho = DensityMatrix.maximally_mixed(cluster3.layout)
    H = np.zeros((12, 12), dtype=complex)
    H[0, 1] = 1.0
    with pytest.raises(ValueError):
        apply_dephasing(rho, H)


def test_p1_relaxation_action(cluster3, rng):
    layout = cluster3.layout
    rho = DensityMatrix(random_density_matrix(rng, 12), layout)
    pol_h = polarization(rho, "H")
    nv_pops = reduced_populations(rho, "NV")
    out = apply_p1_relaxation(rho, layout, "P1")
    assert polarization(out, "P1") == pytest.approx(0.0, abs=1e-12)
    assert polarization(out, "H") == pytest.approx(pol_h, abs=1e-12)
    assert np.allclose(reduced_populations(out, "NV"), nv_pops, atol=1e-12)
    # fixed point: applying again changes nothing
    again = apply_p1_relaxation(out, layout, "P1")
    assert np.max(np.abs(again.rho - out.rho)) < 1e-12
    with pytest.raises(ValueError):
        apply_p1_relaxation(rho, layout, "NV")


def test_p1_relaxation_matches_tm_on_populations(cluster3):
    """On diagonal states the channel equals the 8-state averaging matrix."""
    layout = cluster3.layout
    rng = np.random.default_rng(7)
    v8 = rng.random(8)
    v8 /= v8.sum()
    # embed the 8 crossing-region states (m_NV in {0, -1}) as populations
    states = [(0.0, -0.5, 0.5), (0.0, -0.5, -0.5), (0.0, 0.5, 0.5),
              (0.0, 0.5, -0.5), (-1.0, -0.5, 0.5), (-1.0, -0.5, -0.5),
              (-1.0, 0.5, 0.5), (-1.0, 0.5, -0.5)]
    pops = np.zeros(layout.dim)
    for w, s in zip(v8, states):
        pops[layout.basis_index(s)] = w
    rho = DensityMatrix.from_populations(pops, layout)
    out = apply_p1_relaxation(rho, layout, "P1")
    expected = transfer_matrix.tm_t1().T @ v8
    got = np.array([out.rho[layout.basis_index(s), layout.basis_index(s)].real
                    for s in states])
    assert np.max(np.abs(got - expected)) < 1e-12


def test_optical_repolarize(cluster3, rng):
    layout = cluster3.layout
    rho = DensityMatrix(random_density_matrix(rng, 12), layout)
    full = optical_repolarize(rho, 2.0)
    assert np.allclose(reduced_populations(full, "NV"), [0.0, 1.0, 0.0],
                       atol=1e-12)
    none = optical_repolarize(rho, 0.0)
    assert np.allclose(reduced_populations(none, "NV"), [1 / 3] * 3, atol=1e-12)
    # non-NV reduced state untouched
    d_nv = layout.dims[0]
    rest_in = np.trace(rho.rho.reshape(d_nv, 4, d_nv, 4), axis1=0, axis2=2)
    rest_out = np.trace(full.rho.reshape(d_nv, 4, d_nv, 4), axis1=0, axis2=2)
    assert np.max(np.abs(rest_in - rest_out)) < 1e-12
    with pytest.raises(ValueError):
        optical_repolarize(rho, 2.5)


# --- segments and protocols ------------------------------------------------


def test_sweep_segment_validation():
    seg = SweepSegment(51.0, 51.5, 2.0)
    assert seg.duration == pytest.approx(0.25)
    assert seg.direction == "up"
    assert SweepSegment(51.5, 51.0, 2.0).direction == "down"
    with pytest.raises(ValueError):
        SweepSegment(51.0, 51.5, 0.0)
    with pytest.raises(ValueError):
        SweepSegment(51.0, 51.5, 2.0, t1_events=(0.3,))


def test_choose_step_count_limits(cluster3):
    gaps = model.gap_estimates(cluster3)
    seg = SweepSegment(51.0, 51.5, 3.0)
    n = choose_step_count(seg, gaps, cluster3.constants.gamma_e)
    # energy drift per step below delta1/20
    dt = seg.duration / n
    assert cluster3.constants.gamma_e * seg.beta * dt <= gaps.delta1 / 20 * (1 + 1e-9)
    # crossing time resolved by at least 50 steps
    tau_lz = gaps.delta0 / (2 * cluster3.constants.gamma_e * seg.beta)
    assert dt <= tau_lz / 50 * (1 + 1e-9)
    with pytest.raises(StepSizeError):
        choose_step_count(seg, gaps, cluster3.constants.gamma_e, max_steps=100)


def test_protocol_validation():
    seg = SweepSegment(51.0, 51.5, 3.0)
    with pytest.raises(ValueError):
        Protocol(segments=(seg,), optical_placement="sideways")
    with pytest.raises(ValueError):
        Protocol(segments=(seg,), epsilon=3.0)
    with pytest.raises(ValueError):
        Protocol(segments=(seg,), eta_nv=1.5)
    with pytest.raises(ValueError):
        Protocol(segments=(seg,), l_cycles=0)
    assert Protocol(segments=(seg,), epsilon=2.0, eta_nv=0.5).effective_epsilon \
        == pytest.approx(1.0)


def test_time_series_monotonicity():
    ts = TimeSeries()
    rec = TimeSeriesRecord(t_ms=1.0, B_mT=51.0, pol_H=0.0, pol_NV=0.0,
                           pol_P1=0.0, cycle_index=0, event_tag="x",
                           eigen_populations=np.zeros(2))
    ts.append(rec)
    earlier = TimeSeriesRecord(t_ms=0.5, B_mT=51.0, pol_H=0.0, pol_NV=0.0,
                               pol_P1=0.0, cycle_index=0, event_tag="x",
                               eigen_populations=np.zeros(2))
    with pytest.raises(ValueError):
        ts.append(earlier)


def test_make_ratchet_protocol_t1_sites():
    cfg = model.make_cluster(include_bystander=True)
    proto = make_ratchet_protocol(cfg, with_t1=True)
    assert set(proto.t1_sites) == {"P1", "B1"}
    cfg3 = model.make_cluster()
    assert make_ratchet_protocol(cfg3, with_t1=True).t1_sites == ("P1",)


def test_run_protocol_structure(cluster3):
    proto = make_ratchet_protocol(cluster3, beta_up=20.0, beta_down=20.0,
                                  n_cycles=2, with_t1=True)
    rho0 = ratchet_initial_state(cluster3, "thermal")
    ts = run_protocol(cluster3, proto, rho0=rho0, validate_each=True)
    # per cycle: optical + two sweep records
    assert len(ts.records) == 2 * 3
    t = ts.column("t_ms")
    assert np.all(np.diff(t) >= 0)
    tags = ts.column("event_tag")
    assert tags[0] == "optical"
    assert tags[1].startswith("sweep_up")
    assert "+t1" in tags[1]
    assert np.all(np.abs(ts.column("pol_H")) <= 1.0)
    empty = Protocol(segments=())
    assert run_protocol(cluster3, empty).records == []


def test_decoupled_bystander_matches_three_spin():
    """A B1 with zero coupling must not change any observable."""
    cfg3 = model.make_cluster(j_nv_p1=0.3, j_h_p1=0.2)
    cfg4 = model.make_cluster(j_nv_p1=0.3, j_h_p1=0.2,
                              include_bystander=True, j_nv_b1=0.0)
    finals = []
    for cfg in (cfg3, cfg4):
        proto = make_ratchet_protocol(cfg, beta_up=6.0, beta_down=10.0,
                                      n_cycles=2, dephase=True, with_t1=True)
        ts = run_protocol(cfg, proto, rho0=ratchet_initial_state(cfg, "thermal"))
        finals.append(ts.final().pol_H)
    assert finals[0] == pytest.approx(finals[1], abs=1e-6)


def test_propagate_segment_dephase_flag(cluster3, rng):
    gaps = model.gap_estimates(cluster3)
    seg = SweepSegment(51.0, 51.1, 10.0, dephase_at_end=True)
    rho = DensityMatrix(random_density_matrix(rng, 12), cluster3.layout)
    out = propagate_segment(rho, seg, cluster3, gaps=gaps)
    H_end = model.assemble_hamiltonian(cluster3, 51.1)
    again = apply_dephasing(out, H_end)
    assert np.max(np.abs(again.rho - out.rho)) < 1e-10
