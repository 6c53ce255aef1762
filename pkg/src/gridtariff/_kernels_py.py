"""Pure numpy implementations of the power-flow kernels.

Same signatures as the compiled ``_kernels`` module; used when the extension
is not built or when ``GRIDTARIFF_PURE_PYTHON=1``.
"""
import numpy as np

BACKEND = "python"


def power_injections(G, B, vm, va):
    """Net injected (P, Q) per bus in per-unit for a polar voltage state."""
    V = vm * np.exp(1j * va)
    S = V * np.conj((G + 1j * B) @ V)
    return S.real.copy(), S.imag.copy()


def jacobian_polar(G, B, vm, va, pvpq, pq):
    """d(P[pvpq], Q[pq]) / d(va[pvpq], vm[pq]) as a dense matrix."""
    Y = G + 1j * B
    V = vm * np.exp(1j * va)
    Ibus = Y @ V
    diagV = np.diag(V)
    diagI = np.diag(Ibus)
    diagVnorm = np.diag(V / np.abs(V))
    dS_dVa = 1j * diagV @ np.conj(diagI - Y @ diagV)
    dS_dVm = diagV @ np.conj(Y @ diagVnorm) + np.conj(diagI) @ diagVnorm
    j11 = dS_dVa.real[np.ix_(pvpq, pvpq)]
    j12 = dS_dVm.real[np.ix_(pvpq, pq)]
    j21 = dS_dVa.imag[np.ix_(pq, pvpq)]
    j22 = dS_dVm.imag[np.ix_(pq, pq)]
    return np.block([[j11, j12], [j21, j22]])
