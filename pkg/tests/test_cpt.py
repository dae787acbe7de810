import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qdla.cpt import (
    BRIGHT12,
    BRIGHT34,
    DARK12,
    DARK34,
    GAMMA_G,
    RHO_BRIGHT,
    RHO_DARK,
    RHO_GROUND_MIX,
    CPTParams,
    Detector,
    build_hamiltonian,
    check_density_matrix,
    detect_rho55,
    fidelity,
    free_decay,
    ket,
    lindblad_evolve,
    prepare_dark_states,
    sensing_drive,
    sensing_evolution,
    sensing_unitary,
    tilde_rho55,
)
from qdla.errors import ConfigError
from qdla.sequences import CP, PDD, PulseTrain
from qdla.signals import TargetSignal
from qdla.spin import phase_ideal_exact

P = CPTParams()
W = 2 * math.pi * 5e4
TAU = math.pi / W


def proj(v):
    return np.outer(v, v.conj())


def test_defaults():
    assert P.Gamma == pytest.approx(2 * math.pi * 5.746e6)
    assert P.Omega == pytest.approx(0.035 * P.Gamma)
    assert P.T_prep == 1e-4 and P.T_detect == 2e-6
    assert P.amplitude(1e-9) == pytest.approx(1.0014 * 2 * math.pi * 1.4e6 / 1e-4 * 1e-9)
    assert GAMMA_G < 0


def test_hamiltonian_structure():
    h_on = build_hamiltonian(P, True)
    h_off = build_hamiltonian(P, False)
    np.testing.assert_array_equal(h_on, h_on.conj().T)
    assert np.count_nonzero(h_off - np.diag(np.diag(h_off))) == 0
    assert h_on[0, 0].real == pytest.approx(-2 * math.pi * 1e6)
    assert np.all(h_on[:4, 4] != 0) and np.all(h_on[4, :4] != 0)


def test_unitary_limit_conserves_purity():
    p = P.with_(Gamma=1e-300)
    psi = np.array([1, 2j, 0.5, -1, 0.3], dtype=complex)
    psi /= np.linalg.norm(psi)
    rho = lindblad_evolve(proj(psi), p, 3e-7, light_on=False)
    assert np.trace(rho @ rho).real == pytest.approx(1.0, abs=1e-8)


def test_excited_state_decay():
    rho0 = proj(ket(5))
    t = 50e-9
    rho = lindblad_evolve(rho0, P, t, light_on=False)
    assert rho[4, 4].real == pytest.approx(math.exp(-P.Gamma * t), rel=1e-8)
    np.testing.assert_allclose(np.diag(rho)[:4].real, (1 - math.exp(-P.Gamma * t)) / 4, rtol=1e-8)
    np.testing.assert_allclose(free_decay(rho0, P, t), rho, atol=1e-12)


def test_dark_state_stays_dark():
    rho = lindblad_evolve(RHO_DARK, P, 2e-6, light_on=True)
    assert rho[4, 4].real < 1e-4


def test_preparation_fidelity_and_monotone():
    rho, f = prepare_dark_states(P)
    check_density_matrix(rho)
    assert f >= 0.99
    _, f2 = prepare_dark_states(P.with_(T_prep=2e-4))
    assert f2 >= f - 1e-12


def test_uniform_mixture_fidelity():
    _, f0 = prepare_dark_states(P.with_(T_prep=1e-15))
    # sqrt(rho_mix) = I4/2 on the ground space, so F = Tr sqrt(rho_D / 4) = 2 * (1/2) * sqrt(1/2) ... evaluated directly
    expected = float(np.sum(np.sqrt(np.clip(np.linalg.eigvalsh(RHO_DARK / 4), 0, None))))
    assert f0 == pytest.approx(expected, abs=1e-9)
    assert fidelity(RHO_GROUND_MIX, RHO_DARK) == pytest.approx(math.sqrt(2) / 2, abs=1e-12)


def test_cross_coherences_stay_small():
    rho, _ = prepare_dark_states(P)
    after = lindblad_evolve(rho, P, P.T_detect, light_on=True)
    for state in (rho, after):
        assert np.max(np.abs(state[np.ix_([0, 1], [2, 3])])) < 1e-3


def test_density_matrix_checks():
    with pytest.raises(ConfigError):
        check_density_matrix(np.diag([0.5, 0.6, 0, 0, 0]).astype(complex))
    with pytest.raises(ConfigError):
        check_density_matrix(np.diag([1.2, -0.2, 0, 0, 0]).astype(complex))


def _trains(tau_m=TAU, n=20, width=0.0):
    return PulseTrain(PDD, tau_m, n, width), PulseTrain(CP, tau_m, n, width)


def test_zero_amplitude_keeps_coherences():
    tp, tc = _trains()
    rho = sensing_evolution(RHO_DARK, TargetSignal(0.0, W), tp, tc, P)
    np.testing.assert_allclose(np.abs(rho), np.abs(RHO_DARK), atol=1e-12)


def test_light_on_sensing_rejected():
    tp, tc = _trains()
    with pytest.raises(ConfigError):
        sensing_evolution(RHO_DARK, TargetSignal(1.0, W), tp, tc, P, light_on=True)


def test_block_phases_equal_spin_phases():
    sig = TargetSignal(1e4, W, -0.7)
    tp, tc = _trains(1.01 * TAU, 20)
    u = sensing_unitary(sig, tp, tc, P)[0]
    u0 = sensing_unitary(TargetSignal(0.0, W), tp, tc, P)[0]
    for sl, train in ((slice(0, 2), tp), (slice(2, 4), tc)):
        v = u[sl, sl] @ np.array([1, 1]) / math.sqrt(2)
        v0 = u0[sl, sl] @ np.array([1, 1]) / math.sqrt(2)
        # an odd number of pi pulses swaps the pair, which conjugates the relative phase
        sign = -1 if train.pulse_count % 2 else 1
        dphi = sign * np.angle((v[1] / v[0]) / (v0[1] / v0[0]))
        assert dphi == pytest.approx(phase_ideal_exact(train, sig), abs=1e-8)


def test_strict_signs_flip_cp_block():
    sig = TargetSignal(3e4, W, -0.7)
    flipped = TargetSignal(3e4, W, -0.7 + math.pi)
    tp, tc = _trains()
    a = sensing_unitary(sig, tp, tc, P)[0]
    b = sensing_unitary(sig, tp, tc, P.with_(strict_signs=True))[0]
    c = sensing_unitary(flipped, tp, tc, P)[0]
    np.testing.assert_allclose(b[:2, :2], a[:2, :2], atol=1e-14)
    np.testing.assert_allclose(b[2:4, 2:4], c[2:4, 2:4], atol=1e-14)


def test_block_evolution_against_full_five_level_lindblad():
    rho, _ = prepare_dark_states(P)
    sig = TargetSignal(P.amplitude(2e-6), W, -math.pi / 6)
    tp, tc = _trains(TAU, 2, 2e-6)
    block = sensing_evolution(rho, sig, tp, tc, P)
    drive, edges = sensing_drive(sig, tp, tc, P)
    full = lindblad_evolve(rho, P, tp.duration, light_on=False, drive=drive, breakpoints=edges)
    np.testing.assert_allclose(block, full, atol=1e-6)


def test_detection_dark_bright_and_normalization():
    det = Detector(P)
    assert det(RHO_DARK)[1] == pytest.approx(0.0, abs=1e-3)
    assert det(RHO_BRIGHT)[1] == pytest.approx(1.0, abs=1e-12)
    r55, norm = detect_rho55(RHO_BRIGHT, P)
    assert r55 == pytest.approx(det.a)


def test_detection_flipped_coherences_are_bright():
    tp, tc = _trains()
    # a phase of pi on both pairs turns each dark state into the bright one
    flip = np.diag([1, -1, 1, -1, 1]).astype(complex)
    rho = flip @ RHO_DARK @ flip
    assert Detector(P)(rho)[1] == pytest.approx(1.0, abs=1e-9)


def test_detection_tracks_sum_predictor():
    det = Detector(P)
    grid = np.linspace(0, math.pi, 9)
    pred, meas = [], []
    for a in grid:
        for b in grid:
            psi12 = (ket(1) - np.exp(1j * a) * ket(2)) / math.sqrt(2)
            psi34 = (ket(3) - np.exp(1j * b) * ket(4)) / math.sqrt(2)
            rho = 0.5 * (proj(psi12) + proj(psi34))
            meas.append(det(rho)[1])
            pred.append(((1 - math.cos(a)) / 2 + (1 - math.cos(b)) / 2) / 2)
    pred, meas = np.array(pred), np.array(meas)
    slope = np.dot(pred, meas) / np.dot(pred, pred)
    assert slope == pytest.approx(1.0, rel=0.05)
    assert np.max(np.abs(meas - pred)) < 0.05


def test_tilde_rho55():
    np.testing.assert_array_equal(tilde_rho55(np.full(7, 0.3)), np.zeros(7))
    rng = np.random.default_rng(1)
    assert abs(np.mean(tilde_rho55(rng.random(50)))) < 1e-12
    with pytest.raises(ConfigError):
        tilde_rho55([1.0])


@given(st.floats(0, math.pi), st.floats(0, math.pi))
def test_returned_states_are_valid(a, b):
    psi12 = (ket(1) - np.exp(1j * a) * ket(2)) / math.sqrt(2)
    psi34 = (ket(3) - np.exp(1j * b) * ket(4)) / math.sqrt(2)
    rho = 0.5 * (proj(psi12) + proj(psi34))
    out = lindblad_evolve(rho, P, 1e-7, light_on=True)
    check_density_matrix(out)


def test_dark_and_bright_vectors():
    assert abs(np.vdot(DARK12, BRIGHT12)) < 1e-15 and abs(np.vdot(DARK34, BRIGHT34)) < 1e-15
    assert np.trace(RHO_DARK).real == pytest.approx(1.0) and RHO_DARK[4, 4] == 0
