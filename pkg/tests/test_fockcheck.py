import math

import mpmath
import numpy as np
import pytest
from scipy.linalg import expm

from mpqkd.fockcheck import (PseudoFockSpec, TruncationError, beam_splitter_column_norms, beam_splitter_on_first,
                             coherent_state, dft_reconstruction, fourier_basis, poisson_distance, pseudo_fock_state,
                             pseudo_poisson, pseudo_poisson_all, sweep_D, verify_single_mode_decomposition,
                             verify_two_mode_decomposition)


def test_pseudo_poisson_values():
    assert pseudo_poisson(PseudoFockSpec(0.7, 1, 0)) == pytest.approx(1.0, abs=1e-15)
    p0 = pseudo_poisson(PseudoFockSpec(1.0, 2, 0))
    p1 = pseudo_poisson(PseudoFockSpec(1.0, 2, 1))
    assert p0 == pytest.approx(float(mpmath.exp(-1) * mpmath.cosh(1)), rel=1e-14)
    assert p1 == pytest.approx(float(mpmath.exp(-1) * mpmath.sinh(1)), rel=1e-14)
    assert p0 == pytest.approx(0.56766, abs=1e-5)
    assert p1 == pytest.approx(0.43233, abs=1e-5)


@pytest.mark.parametrize("mu", [0.1, 0.5, 1.0, 3.0])
@pytest.mark.parametrize("D", [1, 2, 4, 8, 16])
def test_pseudo_poisson_normalization(mu, D):
    assert abs(pseudo_poisson_all(mu, D).sum() - 1) < 1e-12


def test_pseudo_poisson_against_series():
    mu, D, k = mpmath.mpf("0.8"), 5, 3
    oracle = mpmath.exp(-mu) * mpmath.nsum(lambda m: mu ** (m * D + k) / mpmath.factorial(m * D + k), [0, mpmath.inf])
    assert pseudo_poisson(PseudoFockSpec(0.8, 5, 3)) == pytest.approx(float(oracle), rel=1e-14)


def test_coherent_state_against_mpmath():
    alpha = 0.6 * np.exp(0.4j)
    vec = coherent_state(alpha, 20)
    a = mpmath.mpc(alpha.real, alpha.imag)
    for n in (0, 1, 5, 20):
        ref = mpmath.exp(-abs(a) ** 2 / 2) * a ** n / mpmath.sqrt(mpmath.factorial(n))
        assert vec[n] == pytest.approx(complex(ref), rel=1e-13)


def test_pseudo_fock_disjoint_supports():
    a = pseudo_fock_state(PseudoFockSpec(0.5, 4, 1), 40).amplitudes
    b = pseudo_fock_state(PseudoFockSpec(0.5, 4, 2), 40).amplitudes
    assert np.vdot(a, b) == 0


def test_large_D_single_photon():
    state = pseudo_fock_state(PseudoFockSpec(0.5, 16, 1), 60).amplitudes
    assert abs(state[1]) ** 2 > 1 - 1e-8


def test_dft_reconstruction():
    for mu, D, k in ((0.5, 8, 3), (1.0, 4, 0), (0.1, 16, 1)):
        spec = PseudoFockSpec(mu, D, k)
        rhs = math.sqrt(pseudo_poisson(spec)) * pseudo_fock_state(spec, 60).amplitudes
        assert np.max(np.abs(dft_reconstruction(spec, 60) - rhs)) < 1e-10


def test_fourier_basis_unitary():
    for D in (1, 3, 16):
        F = fourier_basis(D)
        assert np.max(np.abs(F.conj().T @ F - np.eye(D))) < 1e-12


def _bs_oracle(n_max):
    """50:50 splitter as expm of its generator on the two-mode space, total photons <= n_max."""
    dim = n_max + 1
    a = np.diag(np.sqrt(np.arange(1, dim)), 1)
    I = np.eye(dim)
    A, B = np.kron(a, I), np.kron(I, a)
    G = B.conj().T @ A - A.conj().T @ B  # a^dag -> (a^dag + b^dag)/sqrt2
    return expm(math.pi / 4 * G)


def test_beam_splitter_against_expm():
    n_max = 12
    U = _bs_oracle(n_max)
    dim = n_max + 1
    for n in range(0, 9):  # total photon number well inside the grid
        e = np.zeros(dim)
        e[n] = 1.0
        vec_in = np.kron(e, np.eye(dim)[0])
        got = beam_splitter_on_first(e, n_max).ravel()
        assert np.max(np.abs(U @ vec_in - got)) < 1e-12


def test_beam_splitter_norms():
    assert np.max(np.abs(beam_splitter_column_norms(60) - 1)) < 1e-12


@pytest.mark.parametrize("mu", [0.1, 0.5, 1.0])
@pytest.mark.parametrize("D", [4, 8, 16])
def test_single_mode_grid(mu, D):
    rep = verify_single_mode_decomposition(mu, D, 60)
    assert rep.max_deviation < 1e-10, rep.deviations


def test_single_mode_degenerate_D():
    rep = verify_single_mode_decomposition(0.5, 1, 60)
    assert rep.max_deviation < 1e-12


def test_single_mode_brute_force():
    # direct sum of coherent vectors against explicit projectors onto n = k mod D
    mu, D, N = 0.5, 4, 60
    vecs = [coherent_state(math.sqrt(mu) * np.exp(2j * np.pi * j / D), N) for j in range(D)]
    rho = sum(np.outer(v, v.conj()) for v in vecs) / D
    for k in range(D):
        proj = np.diag((np.arange(N + 1) % D == k).astype(float))
        block = proj @ rho @ proj
        spec = PseudoFockSpec(mu, D, k)
        lam = pseudo_fock_state(spec, N).amplitudes
        assert np.max(np.abs(block - pseudo_poisson(spec) * np.outer(lam, lam.conj()))) < 1e-12


def test_two_mode_stated_case():
    rep = verify_two_mode_decomposition(0.25, 8, 40)
    assert rep.max_deviation < 1e-9, rep.deviations


def test_two_mode_qubit_subspace():
    rep = verify_two_mode_decomposition(0.25, 16, 40)
    assert rep.extras["k1_fidelity"] > 1 - 1e-6
    assert rep.max_deviation < 1e-9


def test_truncation_rejected():
    with pytest.raises(TruncationError):
        verify_single_mode_decomposition(5.0, 4, 10)
    with pytest.raises(TruncationError):
        verify_two_mode_decomposition(1.0, 4, 8)


def test_poisson_limit():
    assert poisson_distance(0.5, 16) < 1e-6
    assert poisson_distance(0.5, 2) > 0.05
    rows = sweep_D(0.25, (2, 4), 40)
    assert rows[0]["poisson_tv"] > rows[1]["poisson_tv"]


def test_spec_validation():
    for bad in (dict(mu=0, D=4, k=0), dict(mu=0.5, D=0, k=0), dict(mu=0.5, D=4, k=4)):
        with pytest.raises(ValueError):
            PseudoFockSpec(**bad)
