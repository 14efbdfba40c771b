# cython: language_level=3
"""Compiled split-operator stepping for a cosine-driven Hamiltonian.

Works in the eigenbasis of the drive operator, where the drive flow is a
diagonal phase and the static flow is a dense matrix applied with zgemm.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin
from scipy.linalg.cython_blas cimport zgemm

cnp.import_array()

cdef double TWO_PI = 6.283185307179586


cdef void _gemm(int n, double complex* a, double complex* x,
                double complex* out) noexcept nogil:
    # Row-major out = a @ x, expressed as column-major out^T = x^T a^T.
    cdef char trans = b'N'
    cdef double complex one = 1.0
    cdef double complex zero = 0.0
    zgemm(&trans, &trans, &n, &n, &n, &one, x, &n, a, &n, &zero, out, &n)


def evolve(cnp.ndarray[cnp.complex128_t, ndim=2] x0,
           cnp.ndarray[cnp.complex128_t, ndim=3] flows,
           cnp.ndarray[cnp.int64_t, ndim=1] flow_index,
           cnp.ndarray[double, ndim=1] kick_weights,
           cnp.ndarray[double, ndim=1] coupling,
           double amplitude, double freq, double t0, double h,
           cnp.ndarray[double, ndim=1] clock_steps):
    """Apply the kick/flow sequence to ``x0`` and return the result.

    ``kick_weights[s]`` scales the drive kick at stage ``s``; after it the
    static flow ``flows[flow_index[s]]`` is applied and the clock advances by
    ``clock_steps[s] * h``. ``x0`` must start after the leading half flow.
    """
    cdef int n = x0.shape[0]
    cdef Py_ssize_t stages = kick_weights.shape[0]
    cdef Py_ssize_t s, i, j
    cdef double t = t0
    cdef double ang, f
    cdef double complex ph
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] x = np.ascontiguousarray(x0).copy()
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] y = np.empty_like(x)
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] tmp
    cdef cnp.ndarray[cnp.complex128_t, ndim=3] fl = np.ascontiguousarray(flows)
    cdef double complex* xp
    cdef double complex* yp
    cdef double complex* fp = <double complex*> fl.data
    cdef cnp.int64_t[::1] idx = flow_index
    cdef double[::1] kw = kick_weights
    cdef double[::1] cs = clock_steps
    cdef double[::1] d = coupling
    cdef Py_ssize_t block = n * n

    xp = <double complex*> x.data
    yp = <double complex*> y.data
    with nogil:
        for s in range(stages):
            f = amplitude * cos(TWO_PI * freq * t)
            for i in range(n):
                ang = -TWO_PI * kw[s] * h * f * d[i]
                ph = cos(ang) + 1j * sin(ang)
                for j in range(n):
                    xp[i * n + j] = xp[i * n + j] * ph
            _gemm(n, fp + idx[s] * block, xp, yp)
            xp, yp = yp, xp
            t = t + cs[s] * h
    if xp == <double complex*> x.data:
        return x
    return y
