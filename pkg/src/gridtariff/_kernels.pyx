# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled power-flow kernels: bus injections and the polar Jacobian."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos

cnp.import_array()

BACKEND = "cython"


def power_injections(double[:, ::1] G, double[:, ::1] B, double[::1] vm, double[::1] va):
    cdef Py_ssize_t n = vm.shape[0]
    cdef Py_ssize_t i, j
    cdef double th, c, s, pi, qi
    P = np.empty(n)
    Q = np.empty(n)
    cdef double[::1] Pv = P
    cdef double[::1] Qv = Q
    for i in range(n):
        pi = 0.0
        qi = 0.0
        for j in range(n):
            if G[i, j] == 0.0 and B[i, j] == 0.0:
                continue
            th = va[i] - va[j]
            c = cos(th)
            s = sin(th)
            pi += vm[j] * (G[i, j] * c + B[i, j] * s)
            qi += vm[j] * (G[i, j] * s - B[i, j] * c)
        Pv[i] = vm[i] * pi
        Qv[i] = vm[i] * qi
    return P, Q


def jacobian_polar(double[:, ::1] G, double[:, ::1] B, double[::1] vm, double[::1] va,
                   cnp.intp_t[::1] pvpq, cnp.intp_t[::1] pq):
    cdef Py_ssize_t n = vm.shape[0]
    cdef Py_ssize_t npvpq = pvpq.shape[0]
    cdef Py_ssize_t npq = pq.shape[0]
    cdef Py_ssize_t m = npvpq + npq
    cdef Py_ssize_t a, b, i, j
    cdef double th, c, s
    P_, Q_ = power_injections(G, B, vm, va)
    cdef double[::1] P = P_
    cdef double[::1] Q = Q_
    J_ = np.zeros((m, m))
    cdef double[:, ::1] J = J_

    # P rows
    for a in range(npvpq):
        i = pvpq[a]
        for b in range(npvpq):
            j = pvpq[b]
            if i == j:
                J[a, b] = -Q[i] - B[i, i] * vm[i] * vm[i]
            elif G[i, j] != 0.0 or B[i, j] != 0.0:
                th = va[i] - va[j]
                J[a, b] = vm[i] * vm[j] * (G[i, j] * sin(th) - B[i, j] * cos(th))
        for b in range(npq):
            j = pq[b]
            if i == j:
                J[a, npvpq + b] = P[i] / vm[i] + G[i, i] * vm[i]
            elif G[i, j] != 0.0 or B[i, j] != 0.0:
                th = va[i] - va[j]
                J[a, npvpq + b] = vm[i] * (G[i, j] * cos(th) + B[i, j] * sin(th))
    # Q rows
    for a in range(npq):
        i = pq[a]
        for b in range(npvpq):
            j = pvpq[b]
            if i == j:
                J[npvpq + a, b] = P[i] - G[i, i] * vm[i] * vm[i]
            elif G[i, j] != 0.0 or B[i, j] != 0.0:
                th = va[i] - va[j]
                J[npvpq + a, b] = -vm[i] * vm[j] * (G[i, j] * cos(th) + B[i, j] * sin(th))
        for b in range(npq):
            j = pq[b]
            if i == j:
                J[npvpq + a, npvpq + b] = Q[i] / vm[i] - B[i, i] * vm[i]
            elif G[i, j] != 0.0 or B[i, j] != 0.0:
                th = va[i] - va[j]
                J[npvpq + a, npvpq + b] = vm[i] * (G[i, j] * sin(th) - B[i, j] * cos(th))
    return J_
