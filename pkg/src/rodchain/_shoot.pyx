# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Dormand-Prince integrator for the rod shooting problem.

Same algorithm and signature as ``_shoot_py.propagate``; see that module
for the argument description.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, frexp, ldexp, log, pow

cnp.import_array()

cdef double C2 = 1.0 / 5.0
cdef double C3 = 3.0 / 10.0
cdef double C4 = 4.0 / 5.0
cdef double C5 = 8.0 / 9.0
cdef double A21 = 1.0 / 5.0
cdef double A31 = 3.0 / 40.0
cdef double A32 = 9.0 / 40.0
cdef double A41 = 44.0 / 45.0
cdef double A42 = -56.0 / 15.0
cdef double A43 = 32.0 / 9.0
cdef double A51 = 19372.0 / 6561.0
cdef double A52 = -25360.0 / 2187.0
cdef double A53 = 64448.0 / 6561.0
cdef double A54 = -212.0 / 729.0
cdef double A61 = 9017.0 / 3168.0
cdef double A62 = -355.0 / 33.0
cdef double A63 = 46732.0 / 5247.0
cdef double A64 = 49.0 / 176.0
cdef double A65 = -5103.0 / 18656.0
cdef double B1 = 35.0 / 384.0
cdef double B3 = 500.0 / 1113.0
cdef double B4 = 125.0 / 192.0
cdef double B5 = -2187.0 / 6784.0
cdef double B6 = 11.0 / 84.0
cdef double E1 = 71.0 / 57600.0
cdef double E3 = -71.0 / 16695.0
cdef double E4 = 71.0 / 1920.0
cdef double E5 = -17253.0 / 339200.0
cdef double E6 = 22.0 / 525.0
cdef double E7 = -1.0 / 40.0

cdef double RENORM_HI = 1099511627776.0       # 2**40
cdef double RENORM_LO = 1.0 / 1099511627776.0
cdef long MAX_STEPS = 50000000


cdef struct PP:
    const double* b
    const double* c
    int n
    int k
    int hint


cdef inline double pp_eval(PP* p, double x) noexcept nogil:
    cdef int i = p.hint
    cdef int j
    cdef double s, acc
    while i > 0 and x < p.b[i]:
        i -= 1
    while i < p.n - 1 and x >= p.b[i + 1]:
        i += 1
    p.hint = i
    s = x - p.b[i]
    acc = 0.0
    j = p.k - 1
    while j >= 0:
        acc = acc * s + p.c[i * p.k + j]
        j -= 1
    return acc


cdef inline void rhs(PP* rho, PP* sig, PP* qq, double lam, double x,
                     double a, double b, double* da, double* db) noexcept nogil:
    da[0] = b / pp_eval(sig, x)
    db[0] = (pp_eval(qq, x) - lam * pp_eval(rho, x)) * a


cdef inline double dmax(double a, double b) noexcept nogil:
    return a if a > b else b


cdef inline double dmin(double a, double b) noexcept nogil:
    return a if a < b else b


def propagate(double v, double f, double x0, double x1, double lam,
              rho_b, rho_c, sig_b, sig_c, q_b, q_c,
              double rtol, double kscale, double h0,
              out_x, double[::1] out_v, double[::1] out_f, double[::1] out_ls,
              long fixed_steps):
    cdef const double[::1] rb = np.ascontiguousarray(rho_b, dtype=np.float64)
    cdef const double[:, ::1] rc = np.ascontiguousarray(rho_c, dtype=np.float64)
    cdef const double[::1] sb = np.ascontiguousarray(sig_b, dtype=np.float64)
    cdef const double[:, ::1] sc = np.ascontiguousarray(sig_c, dtype=np.float64)
    cdef const double[::1] qb = np.ascontiguousarray(q_b, dtype=np.float64)
    cdef const double[:, ::1] qc = np.ascontiguousarray(q_c, dtype=np.float64)
    cdef const double[::1] ox = np.ascontiguousarray(out_x, dtype=np.float64)

    cdef PP rho, sig, qq
    rho.b = &rb[0]; rho.c = &rc[0, 0]; rho.n = rc.shape[0]; rho.k = rc.shape[1]; rho.hint = 0
    sig.b = &sb[0]; sig.c = &sc[0, 0]; sig.n = sc.shape[0]; sig.k = sc.shape[1]; sig.hint = 0
    qq.b = &qb[0]; qq.c = &qc[0, 0]; qq.n = qc.shape[0]; qq.k = qc.shape[1]; qq.hint = 0

    cdef Py_ssize_t n_out = ox.shape[0]
    cdef Py_ssize_t io = 0
    cdef double span = x1 - x0
    cdef double direction = 1.0 if span >= 0.0 else -1.0
    cdef double length = fabs(span)
    cdef double ls = 0.0
    cdef long nacc = 0, nrej = 0, nzero = 0
    cdef int last_sign = (v > 0.0) - (v < 0.0)
    cdef int sgn, e
    cdef double k = kscale
    cdef double ln2 = log(2.0)
    cdef double x = x0
    cdef double h, h_nom, hs, remaining, to_out, target, xn
    cdef double k1v, k1f, k2v, k2f, k3v, k3f, k4v, k4f, k5v, k5f, k6v, k6f, k7v, k7f
    cdef double vn, fn, ev, ef, scale, err, fac, mag
    cdef bint adaptive, clipped, hit_end
    cdef bint done = False
    cdef int status = 0

    while io < n_out and (ox[io] - x) * direction <= 0.0:
        out_v[io] = v; out_f[io] = f; out_ls[io] = ls
        io += 1

    if length == 0.0:
        return v, f, ls, nacc, nrej, nzero

    if fixed_steps > 0:
        h_nom = length / fixed_steps
        adaptive = False
    else:
        h_nom = dmin(h0, length)
        adaptive = True

    with nogil:
        rhs(&rho, &sig, &qq, lam, x, v, f, &k1v, &k1f)
        while not done:
            if nacc + nrej > MAX_STEPS:
                status = 1
                break
            h = h_nom
            clipped = False
            hit_end = False
            target = x1
            remaining = (x1 - x) * direction
            if io < n_out:
                to_out = (ox[io] - x) * direction
                if to_out < remaining and to_out <= h * (1.0 + 1e-12):
                    h = to_out
                    target = ox[io]
                    clipped = True
            if not clipped and remaining <= h * (1.0 + 1e-12):
                h = remaining
                clipped = True
                hit_end = True
            hs = h * direction

            rhs(&rho, &sig, &qq, lam, x + C2 * hs,
                v + hs * A21 * k1v, f + hs * A21 * k1f, &k2v, &k2f)
            rhs(&rho, &sig, &qq, lam, x + C3 * hs,
                v + hs * (A31 * k1v + A32 * k2v),
                f + hs * (A31 * k1f + A32 * k2f), &k3v, &k3f)
            rhs(&rho, &sig, &qq, lam, x + C4 * hs,
                v + hs * (A41 * k1v + A42 * k2v + A43 * k3v),
                f + hs * (A41 * k1f + A42 * k2f + A43 * k3f), &k4v, &k4f)
            rhs(&rho, &sig, &qq, lam, x + C5 * hs,
                v + hs * (A51 * k1v + A52 * k2v + A53 * k3v + A54 * k4v),
                f + hs * (A51 * k1f + A52 * k2f + A53 * k3f + A54 * k4f), &k5v, &k5f)
            rhs(&rho, &sig, &qq, lam, x + hs,
                v + hs * (A61 * k1v + A62 * k2v + A63 * k3v + A64 * k4v + A65 * k5v),
                f + hs * (A61 * k1f + A62 * k2f + A63 * k3f + A64 * k4f + A65 * k5f),
                &k6v, &k6f)
            vn = v + hs * (B1 * k1v + B3 * k3v + B4 * k4v + B5 * k5v + B6 * k6v)
            fn = f + hs * (B1 * k1f + B3 * k3f + B4 * k4f + B5 * k5f + B6 * k6f)
            xn = target if clipped else x + hs
            rhs(&rho, &sig, &qq, lam, xn, vn, fn, &k7v, &k7f)

            if adaptive:
                ev = hs * (E1 * k1v + E3 * k3v + E4 * k4v + E5 * k5v + E6 * k6v + E7 * k7v)
                ef = hs * (E1 * k1f + E3 * k3f + E4 * k4f + E5 * k5f + E6 * k6f + E7 * k7f)
                scale = dmax(dmax(fabs(v) * k, fabs(f)), dmax(fabs(vn) * k, fabs(fn)))
                if scale == 0.0:
                    scale = 1e-300
                err = dmax(fabs(ev) * k, fabs(ef)) / (rtol * scale)
                if err > 1.0:
                    nrej += 1
                    h_nom = h * dmax(0.2, 0.9 * pow(err, -0.2))
                    if h_nom < 1e-15 * (1.0 + fabs(x)):
                        status = 2
                        break
                    continue
                if err < 1e-10:
                    fac = 5.0
                else:
                    fac = dmin(5.0, dmax(0.2, 0.9 * pow(err, -0.2)))
                if not clipped:
                    h_nom = h * fac
                else:
                    h_nom = dmax(h_nom, h * fac)

            nacc += 1
            x = xn
            v = vn
            f = fn
            k1v = k7v
            k1f = k7f
            if v != 0.0:
                sgn = 1 if v > 0.0 else -1
                if last_sign != 0 and sgn != last_sign:
                    nzero += 1
                last_sign = sgn

            mag = dmax(fabs(v) * k, fabs(f))
            if mag > RENORM_HI or (0.0 < mag < RENORM_LO):
                frexp(mag, &e)
                v = ldexp(v, -e)
                f = ldexp(f, -e)
                k1v = ldexp(k1v, -e)
                k1f = ldexp(k1f, -e)
                ls += e * ln2

            while io < n_out and (ox[io] - x) * direction <= 1e-14 * (1.0 + fabs(x)):
                out_v[io] = v; out_f[io] = f; out_ls[io] = ls
                io += 1
            if hit_end:
                done = True

    if status == 1:
        raise RuntimeError("step budget exhausted")
    if status == 2:
        raise RuntimeError("step size underflow")
    while io < n_out:
        out_v[io] = v; out_f[io] = f; out_ls[io] = ls
        io += 1
    return v, f, ls, nacc, nrej, nzero
