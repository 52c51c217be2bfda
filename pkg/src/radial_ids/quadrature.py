"""Segment-wise quadrature helpers for radial integrals on a node ladder."""

import numpy as np
from scipy import integrate

QUAD_RTOL = 1e-10
_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


def segment_quad(func, a, b, rtol=QUAD_RTOL):
    """Adaptive Gauss-Kronrod integral of a scalar function on ``[a, b]``."""
    if a == b:
        return 0.0
    val, _ = integrate.quad(func, a, b, epsabs=0.0, epsrel=rtol, limit=200)
    return val


def gauss_legendre(func, a, b):
    """Fixed 24-point Gauss-Legendre rule; ``func`` must accept arrays.

    Used on short subintervals of a segment where the integrand is a smooth
    power law, so the rule is exact to rounding.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    x = mid[..., None] + half[..., None] * _GL_X
    return half * np.sum(_GL_W * func(x), axis=-1)


def cumulative_from_left(func, nodes, rtol=QUAD_RTOL):
    """``int_{nodes[0]}^{nodes[i]} func`` for every node."""
    out = np.zeros(len(nodes))
    for i in range(1, len(nodes)):
        out[i] = out[i - 1] + segment_quad(func, nodes[i - 1], nodes[i], rtol)
    return out


def cumulative_to_infinity(func, nodes, tail, rtol=QUAD_RTOL):
    """``int_{nodes[i]}^inf func`` given the analytic tail beyond the last node."""
    out = np.zeros(len(nodes))
    out[-1] = tail
    for i in range(len(nodes) - 2, -1, -1):
        out[i] = out[i + 1] + segment_quad(func, nodes[i], nodes[i + 1], rtol)
    return out


def power_tail(value_at_end, r_end, exponent):
    """``int_{r_end}^inf C s^-exponent ds`` for ``C r_end^-exponent = value_at_end``."""
    if exponent <= 1.0:
        raise ValueError("power-law tail diverges")
    return value_at_end * r_end / (exponent - 1.0)
