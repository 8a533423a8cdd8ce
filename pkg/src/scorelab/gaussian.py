"""Numerically stable Gaussian primitives.

All noise-level arguments are variances: phi_t is the density of N(0, t).
Tail quantities are computed through erfc/erfcx so that ratios of masses
hundreds of orders of magnitude apart stay meaningful.  Anything smaller
than the representable range evaluates to exact 0; downstream code floors
denominators with the interval-mass regularizer, never with ad-hoc
epsilons.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erfc, erfcx

# Universal density-box constants: every test density satisfies
# C_D_LOWER <= f <= C_D_UPPER on [-1, 1].
C_D_LOWER = 0.2
C_D_UPPER = 5.0

_LOG_2PI = math.log(2.0 * math.pi)


def _check_t(t):
    if not np.all(np.asarray(t) > 0.0):
        raise ValueError(f"noise scale t must be > 0, got {t}")


def _pdf_arr(x, t):
    x = np.asarray(x, dtype=float)
    logpdf = -0.5 * (_LOG_2PI + np.log(t)) - x * x / (2.0 * t)
    return np.exp(logpdf)


def gaussian_pdf(x, t):
    """Density of N(0, t) at x, computed in log space.

    Underflows to exact 0 only when x^2/(2t) exceeds the exp range.
    """
    _check_t(t)
    out = _pdf_arr(x, t)
    return out if out.ndim else float(out)


def gaussian_logpdf(x, t):
    """log phi_t(x); finite for all finite x."""
    _check_t(t)
    x = np.asarray(x, dtype=float)
    out = -0.5 * (_LOG_2PI + np.log(t)) - x * x / (2.0 * t)
    return out if out.ndim else float(out)


def gaussian_pdf_deriv(x, t):
    """phi_t'(x) = -(x/t) * phi_t(x)."""
    _check_t(t)
    x = np.asarray(x, dtype=float)
    out = -(x / t) * _pdf_arr(x, t)
    return out if out.ndim else float(out)


def normal_sf(z):
    """Upper tail P{N(0,1) >= z}, accurate far into the tail."""
    z = np.asarray(z, dtype=float)
    out = 0.5 * erfc(z / math.sqrt(2.0))
    return out if out.ndim else float(out)


def normal_log_sf(z):
    """log P{N(0,1) >= z} without underflow, via the scaled erfcx.

    For z >= 0: log(0.5 * erfcx(z/sqrt(2))) - z^2/2.  For z < 0 the tail
    is order one and the direct formula is fine.
    """
    z = np.asarray(z, dtype=float)
    pos = z >= 0.0
    out = np.empty_like(z, dtype=float)
    zp = np.where(pos, z, 0.0)
    out_pos = np.log(0.5 * erfcx(zp / math.sqrt(2.0))) - zp * zp / 2.0
    with np.errstate(divide="ignore"):
        out_neg = np.log(normal_sf(np.where(pos, 0.0, z)))
    out = np.where(pos, out_pos, out_neg)
    return out if out.ndim else float(out)


def normal_sf_ratio(z1, z2):
    """P{Z >= z1} / P{Z >= z2} for z1 >= z2, stable at extreme z.

    Uses erfcx so the exponential parts cancel analytically:
    ratio = exp((z2^2 - z1^2)/2) * erfcx(z1/sqrt2) / erfcx(z2/sqrt2)
    whenever both arguments are nonnegative.
    """
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    both_pos = (z1 >= 0.0) & (z2 >= 0.0)
    s = math.sqrt(2.0)
    z1p = np.where(both_pos, z1, 1.0)
    z2p = np.where(both_pos, z2, 1.0)
    stable = (
        np.exp((z2p * z2p - z1p * z1p) / 2.0)
        * erfcx(z1p / s)
        / erfcx(z2p / s)
    )
    sf2 = np.asarray(normal_sf(np.where(both_pos, 0.0, z2)))
    with np.errstate(divide="ignore", invalid="ignore"):
        naive = np.asarray(normal_sf(np.where(both_pos, 0.0, z1))) / sf2
    out = np.where(both_pos, stable, naive)
    return out if out.ndim else float(out)


def mills_ratio_inv(z):
    """phi(z) / P{Z >= z} for standard normal, stable for large z.

    Equals 2 / (sqrt(2*pi) * erfcx(z/sqrt(2))) for z >= 0.
    """
    z = np.asarray(z, dtype=float)
    pos = z >= 0.0
    zp = np.where(pos, z, 0.0)
    stable = 2.0 / (math.sqrt(2.0 * math.pi) * erfcx(zp / math.sqrt(2.0)))
    zn = np.where(pos, 0.0, z)
    direct = gaussian_pdf(zn, 1.0) / normal_sf(zn)
    out = np.where(pos, stable, direct)
    return out if out.ndim else float(out)


def interval_mass(a, b, x, t):
    """Mass int_a^b phi_t(x - mu) d mu = P{a <= N(x, t) <= b}.

    a and b may be -inf/+inf.  Written as a difference of upper-tail
    erfc's with ordered arguments so that no catastrophic cancellation of
    near-2 values occurs; results below the floating floor are exact 0.
    """
    _check_t(t)
    if np.any(np.asarray(a) > np.asarray(b)):
        raise ValueError(f"need a <= b, got a={a}, b={b}")
    x = np.asarray(x, dtype=float)
    s = np.sqrt(2.0 * t)
    a_inf = np.isneginf(a)
    b_inf = np.isposinf(b)
    if a_inf and b_inf:
        out = np.ones_like(x)
        return out if out.ndim else float(out)
    if a_inf:
        out = np.clip(0.5 * erfc((x - b) / s), 0.0, 1.0)
        return out if out.ndim else float(out)
    if b_inf:
        out = np.clip(0.5 * erfc((a - x) / s), 0.0, 1.0)
        return out if out.ndim else float(out)
    # Reflect to x >= (a+b)/2: the mass is symmetric about the interval
    # center, and on the right side erfc(B) - erfc(A) never cancels
    # (the arguments straddle or both sit in the small-value tail).
    c = 0.5 * (a + b)
    xr = np.where(x < c, 2.0 * c - x, x)
    A = (xr - a) / s
    B = (xr - b) / s
    out = np.clip(0.5 * (erfc(B) - erfc(A)), 0.0, 1.0)
    return out if out.ndim else float(out)


def regularizer(x, t, c_d=C_D_LOWER):
    """Pointwise density floor c_d * int_{-1}^{1} phi_t(x - mu) d mu.

    Strictly positive wherever the Gaussian mass of [-1, 1] around x is
    representable; underflows to exact 0 beyond that.
    """
    if c_d <= 0.0:
        raise ValueError(f"c_d must be > 0, got {c_d}")
    return c_d * interval_mass(-1.0, 1.0, x, t)


def uniform_convolved_pdf(x, t):
    """(phi_t * u)(x) for the flat density u = 1/2 on [-1, 1]."""
    return 0.5 * interval_mass(-1.0, 1.0, x, t)


def uniform_convolved_deriv(x, t):
    """(phi_t' * u)(x) = (phi_t(x+1) - phi_t(x-1)) / 2."""
    _check_t(t)
    x = np.asarray(x, dtype=float)
    out = 0.5 * (_pdf_arr(x + 1.0, t) - _pdf_arr(x - 1.0, t))
    return out if out.ndim else float(out)


def uniform_score(x, t):
    """Score of the smoothed flat density, (phi_t'*u)/(phi_t*u).

    Inside and near [-1, 1] the direct ratio is used.  Beyond the support
    both numerator and denominator underflow together, so the ratio is
    rewritten with the inverse Mills ratio of the nearer edge:

        s(x,t) = -(1/sqrt(t)) * M((|x|-1)/sqrt(t)) * (1 - r_num) / (1 - r_den)

    with M = phi/Phi-bar, r_num = phi_t(|x|+1)/phi_t(|x|-1) = exp(-2|x|/t)
    and r_den the tail-mass ratio.  This keeps the score finite for every
    finite x.
    """
    _check_t(t)
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    sgn = np.sign(x)
    st = math.sqrt(t)

    # Switch to the Mills form well before phi_t(ax-1) goes denormal.
    far = ax > 1.0 + 30.0 * st
    axn = np.where(far, 1.0, ax)  # near-branch argument, kept in range
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = uniform_convolved_deriv(axn, t) / uniform_convolved_pdf(axn, t)

    z_lo = np.where(far, (ax - 1.0) / st, 1.0)
    z_hi = np.where(far, (ax + 1.0) / st, 2.0)
    r_num = np.exp(np.where(far, -2.0 * ax / t, -1.0))
    r_den = normal_sf_ratio(z_hi, z_lo)
    tail = -(mills_ratio_inv(z_lo) / st) * (1.0 - r_num) / (1.0 - r_den)

    out = sgn * np.where(far, tail, direct)
    out = np.where(ax == 0.0, 0.0, out)
    return out if out.ndim else float(out)


def score_envelope(p, t):
    """Pointwise bound |s(x,t)| <= sqrt((2/t) log(1/(sqrt(2 pi t) p)))."""
    _check_t(t)
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        val = (2.0 / t) * np.maximum(0.0, -np.log(np.sqrt(2.0 * math.pi * t) * p))
    out = np.sqrt(val)
    return out if out.ndim else float(out)
