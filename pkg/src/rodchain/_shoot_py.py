"""Pure-Python Dormand-Prince integrator for the rod shooting problem.

This module mirrors ``_shoot.pyx`` line for line and is used whenever the
compiled extension is missing or ``RODCHAIN_PURE=1`` is set.

The state is ``(value, flux)`` with ``value' = flux / sigma`` and
``flux' = (q - lam * rho) * value``.  Coefficients arrive as piecewise
polynomials: ``breaks`` (length ``p + 1``) and ``coeffs`` of shape
``(p, k)``, lowest power first, in the local variable ``x - breaks[i]``.
"""
import math

# Dormand-Prince 5(4) tableau
C2, C3, C4, C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = (
    9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0
)
B1, B3, B4, B5, B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
E1, E3, E4, E5, E6, E7 = (
    71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0
)

LN2 = math.log(2.0)
RENORM_HI = 2.0 ** 40
RENORM_LO = 2.0 ** -40
MAX_STEPS = 50_000_000


class _PP:
    """Piecewise polynomial with a cached piece index."""

    __slots__ = ("b", "c", "n", "hint")

    def __init__(self, breaks, coeffs):
        self.b = [float(t) for t in breaks]
        self.c = [[float(a) for a in row] for row in coeffs]
        self.n = len(self.c)
        self.hint = 0

    def __call__(self, x):
        b = self.b
        i = self.hint
        n = self.n
        while i > 0 and x < b[i]:
            i -= 1
        while i < n - 1 and x >= b[i + 1]:
            i += 1
        self.hint = i
        s = x - b[i]
        row = self.c[i]
        acc = 0.0
        for a in reversed(row):
            acc = acc * s + a
        return acc


def propagate(v, f, x0, x1, lam, rho_b, rho_c, sig_b, sig_c, q_b, q_c,
              rtol, kscale, h0, out_x, out_v, out_f, out_ls, fixed_steps):
    """Integrate from ``x0`` to ``x1`` and return the terminal data.

    Parameters
    ----------
    v, f : float
        Initial value and flux.
    x0, x1 : float
        Start and end abscissae; ``x1 < x0`` integrates leftwards.
    lam : float
        Spectral parameter.
    rho_b, rho_c, sig_b, sig_c, q_b, q_c : array_like
        Piecewise-polynomial coefficient data.
    rtol : float
        Relative tolerance in the energy-weighted norm.
    kscale : float
        Frequency scale used to weight the value against the flux.
    h0 : float
        Initial step magnitude.
    out_x : array_like
        Sorted (in travel direction) abscissae where the state is recorded.
    out_v, out_f, out_ls : ndarray
        Output buffers, same length as ``out_x``; filled in place.
    fixed_steps : int
        If positive, use that many equal steps and skip error control.

    Returns
    -------
    tuple
        ``(v, f, log_scale, n_accepted, n_rejected, n_zeros)``.
    """
    rho = _PP(rho_b, rho_c)
    sig = _PP(sig_b, sig_c)
    qq = _PP(q_b, q_c)

    def rhs(x, a, b):
        return b / sig(x), (qq(x) - lam * rho(x)) * a

    span = x1 - x0
    direction = 1.0 if span >= 0.0 else -1.0
    length = abs(span)
    n_out = len(out_x)
    io = 0
    ls = 0.0
    nacc = 0
    nrej = 0
    nzero = 0
    last_sign = (v > 0.0) - (v < 0.0)
    k = kscale

    x = x0
    while io < n_out and (out_x[io] - x) * direction <= 0.0:
        out_v[io] = v
        out_f[io] = f
        out_ls[io] = ls
        io += 1

    if length == 0.0:
        return v, f, ls, nacc, nrej, nzero

    if fixed_steps > 0:
        h_nom = length / fixed_steps
        adaptive = False
    else:
        h_nom = min(h0, length)
        adaptive = True

    k1v, k1f = rhs(x, v, f)
    done = False
    while not done:
        if nacc + nrej > MAX_STEPS:
            raise RuntimeError("step budget exhausted")
        h = h_nom
        clipped = False
        hit_end = False
        target = x1
        remaining = (x1 - x) * direction
        if io < n_out:
            to_out = (out_x[io] - x) * direction
            if to_out < remaining and to_out <= h * (1.0 + 1e-12):
                h = to_out
                target = out_x[io]
                clipped = True
        if not clipped and remaining <= h * (1.0 + 1e-12):
            h = remaining
            clipped = True
            hit_end = True
        hs = h * direction

        k2v, k2f = rhs(x + C2 * hs, v + hs * A21 * k1v, f + hs * A21 * k1f)
        k3v, k3f = rhs(x + C3 * hs,
                       v + hs * (A31 * k1v + A32 * k2v),
                       f + hs * (A31 * k1f + A32 * k2f))
        k4v, k4f = rhs(x + C4 * hs,
                       v + hs * (A41 * k1v + A42 * k2v + A43 * k3v),
                       f + hs * (A41 * k1f + A42 * k2f + A43 * k3f))
        k5v, k5f = rhs(x + C5 * hs,
                       v + hs * (A51 * k1v + A52 * k2v + A53 * k3v + A54 * k4v),
                       f + hs * (A51 * k1f + A52 * k2f + A53 * k3f + A54 * k4f))
        k6v, k6f = rhs(x + hs,
                       v + hs * (A61 * k1v + A62 * k2v + A63 * k3v + A64 * k4v + A65 * k5v),
                       f + hs * (A61 * k1f + A62 * k2f + A63 * k3f + A64 * k4f + A65 * k5f))
        vn = v + hs * (B1 * k1v + B3 * k3v + B4 * k4v + B5 * k5v + B6 * k6v)
        fn = f + hs * (B1 * k1f + B3 * k3f + B4 * k4f + B5 * k5f + B6 * k6f)
        xn = target if clipped else x + hs
        k7v, k7f = rhs(xn, vn, fn)

        if adaptive:
            ev = hs * (E1 * k1v + E3 * k3v + E4 * k4v + E5 * k5v + E6 * k6v + E7 * k7v)
            ef = hs * (E1 * k1f + E3 * k3f + E4 * k4f + E5 * k5f + E6 * k6f + E7 * k7f)
            scale = max(abs(v) * k, abs(f), abs(vn) * k, abs(fn))
            if scale == 0.0:
                scale = 1e-300
            err = max(abs(ev) * k, abs(ef)) / (rtol * scale)
            if err > 1.0:
                nrej += 1
                h_nom = h * max(0.2, 0.9 * err ** -0.2)
                if h_nom < 1e-15 * (1.0 + abs(x)):
                    raise RuntimeError("step size underflow")
                continue
            if err < 1e-10:
                fac = 5.0
            else:
                fac = min(5.0, max(0.2, 0.9 * err ** -0.2))
            if not clipped:
                h_nom = h * fac
            else:
                h_nom = max(h_nom, h * fac)

        nacc += 1
        x = xn
        v = vn
        f = fn
        k1v = k7v
        k1f = k7f
        if v != 0.0:
            s = 1 if v > 0.0 else -1
            if last_sign != 0 and s != last_sign:
                nzero += 1
            last_sign = s

        mag = max(abs(v) * k, abs(f))
        if mag > RENORM_HI or (0.0 < mag < RENORM_LO):
            e = math.frexp(mag)[1]
            v = math.ldexp(v, -e)
            f = math.ldexp(f, -e)
            k1v = math.ldexp(k1v, -e)
            k1f = math.ldexp(k1f, -e)
            ls += e * LN2

        while io < n_out and (out_x[io] - x) * direction <= 1e-14 * (1.0 + abs(x)):
            out_v[io] = v
            out_f[io] = f
            out_ls[io] = ls
            io += 1
        if hit_end:
            done = True

    while io < n_out:
        out_v[io] = v
        out_f[io] = f
        out_ls[io] = ls
        io += 1
    return v, f, ls, nacc, nrej, nzero
