"""Regime-dependent score estimators and the (n, t, alpha) dispatcher.

Four regimes, split by the noise variance t and the smoothness alpha:

* very high (t >= 1): plug-in with the floored density
      p_hat = max(eps(x,t), mean_j phi_t(x - mu_j)),
      psi_hat = -(x/t) p_hat + mean_j mu_j phi_t(x - mu_j) / t,
      s_hat = psi_hat / p_hat.
* high (n^(-2/(2a+1)) <= t < 1): unbiased empirical sums
      s_hat = mean_j phi_t'(x - mu_j) / max(mean_j phi_t(x - mu_j), eps).
* low, alpha >= 1 (t < n^(-2/(2a+1))): kernel plug-in split over the
  internal / boundary / external regions D1/D2/D3; D1 floors the
  denominator with eps, D2 u D3 uses the raw convolved estimate under
  the Omega event and otherwise falls back to the flat-density score.
* low, alpha < 1: the data-free flat-density score.

Every evaluator returns a finite value for every finite x: where a
denominator underflows to exact zero in float64 (mathematically it is
strictly positive), the flat-density closed-form score is substituted.
The risk weight p(x, t) underflows at the same points, so the
substitution never influences a computed risk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .densities import AnalyticDensity, Dataset
from .gaussian import C_D_LOWER, _pdf_arr, regularizer, uniform_score
from .kde import KdeModel, fit_kde, omega_event
from .quadrature import grid_nodes

REGION_CONSTANT = 4.0
T_SWITCH_HIGH = 1.0

REGIME_VERY_HIGH = "very_high"
REGIME_HIGH = "high"
REGIME_LOW_SMOOTH = "low_smooth"
REGIME_LOW_ROUGH = "low_rough"

_CHUNK_ELEMS = 4_000_000


def low_noise_threshold(n: int, alpha: float) -> float:
    """Regime switch t = n^(-2/(2 alpha + 1))."""
    return float(n) ** (-2.0 / (2.0 * alpha + 1.0))


def classify_regime(n: int, alpha: float, t: float,
                    t_switch_high: float = T_SWITCH_HIGH) -> str:
    if t <= 0.0:
        raise ValueError(f"need t > 0, got {t}")
    if t >= t_switch_high:
        return REGIME_VERY_HIGH
    if t >= low_noise_threshold(n, alpha):
        return REGIME_HIGH
    return REGIME_LOW_SMOOTH if alpha >= 1.0 else REGIME_LOW_ROUGH


def inner_boundary(t: float, C: float = REGION_CONSTANT) -> float:
    """D1 half-width 1 - sqrt(C t log(1/t)); log clamped at 0 for t >= 1."""
    val = C * t * max(math.log(1.0 / t), 0.0)
    return max(1.0 - math.sqrt(val), 0.0)


def region_tags(x, t: float, C: float = REGION_CONSTANT):
    """Masks (d1, d2, d3): internal, boundary (both endpoints), external."""
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    s_in = inner_boundary(t, C)
    outer = 1.0 + C * math.sqrt(t)
    d1 = ax < s_in
    d3 = ax > outer
    d2 = ~(d1 | d3)
    return d1, d2, d3


# ---------------------------------------------------------------------------
# Empirical sums over data
# ---------------------------------------------------------------------------

def empirical_sums(mu, x, t: float, want_m1: bool = False,
                   want_deriv: bool = False):
    """Chunked means over the data: phi_t(x - mu_j), and optionally
    mu_j phi_t(x - mu_j) and phi_t'(x - mu_j)."""
    mu = np.asarray(mu, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = len(mu)
    p = np.empty(len(x))
    m1 = np.empty(len(x)) if want_m1 else None
    dpsi = np.empty(len(x)) if want_deriv else None
    step = max(1, _CHUNK_ELEMS // max(n, 1))
    for i in range(0, len(x), step):
        sl = slice(i, i + step)
        diff = x[sl, None] - mu[None, :]
        phi = _pdf_arr(diff, t)
        p[sl] = phi.mean(axis=1)
        if want_m1:
            m1[sl] = (phi * mu[None, :]).mean(axis=1)
        if want_deriv:
            dpsi[sl] = (phi * (-diff / t)).mean(axis=1)
    return p, m1, dpsi


def _finite_ratio(num, den, x, t: float):
    """num/den with the flat-density score where den underflowed to 0."""
    ok = den > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        val = num / np.where(ok, den, 1.0)
    return np.where(ok, val, uniform_score(x, t))


def score_very_high(data: Dataset, x, t: float,
                    c_d: float = C_D_LOWER):
    """Floored plug-in estimator for t above the high-noise switch."""
    p_hat, psi_hat = very_high_components(data, x, t, c_d)[:2]
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return _finite_ratio(psi_hat, p_hat, x, t)


def very_high_components(data: Dataset, x, t: float,
                         c_d: float = C_D_LOWER):
    """(p_hat, psi_hat, m1_hat/t) with p_hat = max(eps, mean phi) and
    psi_hat = -(x/t) p_hat + m1_hat / t."""
    if data.n == 0:
        raise ValueError("empty dataset")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p_raw, m1, _ = empirical_sums(data.values, x, t, want_m1=True)
    p_hat = np.maximum(regularizer(x, t, c_d), p_raw)
    psi_hat = -(x / t) * p_hat + m1 / t
    return p_hat, psi_hat, m1 / t


def score_high(data: Dataset, x, t: float, c_d: float = C_D_LOWER):
    """Unbiased empirical sums with the floored denominator, 0 < t <= 1."""
    if data.n == 0:
        raise ValueError("empty dataset")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p_raw, _, psi_hat = empirical_sums(data.values, x, t, want_deriv=True)
    den = np.maximum(p_raw, regularizer(x, t, c_d))
    return _finite_ratio(psi_hat, den, x, t)


def score_low_rough(x, t: float):
    """Data-free estimator: the score of the smoothed flat density."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return uniform_score(x, t)


# ---------------------------------------------------------------------------
# Low-noise kernel plug-in
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DensityProfile:
    """What the low-noise formulas read from a fitted (or exact) density:
    boundary values and node samples of f and f' on [-1, 1]."""

    f_left: float
    f_right: float
    nodes: np.ndarray
    weights: np.ndarray
    f_nodes: np.ndarray
    fp_nodes: np.ndarray

    def scaled(self, lam: float) -> "DensityProfile":
        """Profile of lam * f; the D2/D3 score is invariant under this."""
        return DensityProfile(
            f_left=lam * self.f_left,
            f_right=lam * self.f_right,
            nodes=self.nodes,
            weights=self.weights,
            f_nodes=lam * self.f_nodes,
            fp_nodes=lam * self.fp_nodes,
        )


def _conv_panel_width(t: float, h: float | None, extra: float | None = None,
                      cap: float = 0.05) -> float:
    vals = [math.sqrt(t), cap]
    if h is not None:
        vals.append(h)
    if extra is not None:
        vals.append(extra)
    return min(vals)


def profile_from_kde(kde: KdeModel, t: float,
                     nodes_per_panel: int = 16) -> DensityProfile:
    """Sample fhat, fhat' on shared convolution nodes (width min(sqrt t, h, .05)).

    Node arrays use the windowed power-sum evaluation (1e-4 worst-case
    relative, far below the estimator's own statistical error); the two
    boundary values use the exact path.
    """
    nodes, weights = grid_nodes(
        -1.0, 1.0, _conv_panel_width(t, kde.h), nodes_per_panel
    )
    return DensityProfile(
        f_left=float(kde.eval(np.array([-1.0]))[0]),
        f_right=float(kde.eval(np.array([1.0]))[0]),
        nodes=nodes,
        weights=weights,
        f_nodes=kde.eval_fast(nodes, 0),
        fp_nodes=kde.eval_fast(nodes, 1),
    )


def profile_from_density(density: AnalyticDensity, t: float,
                         nodes_per_panel: int = 16) -> DensityProfile:
    """Oracle injection: exact f in place of the kernel estimate."""
    extra = density.rho / 2.0 if density.kind == "bump" else None
    nodes, weights = grid_nodes(
        -1.0, 1.0, _conv_panel_width(t, None, extra), nodes_per_panel
    )
    return DensityProfile(
        f_left=float(density.pdf(-1.0)),
        f_right=float(density.pdf(1.0)),
        nodes=nodes,
        weights=weights,
        f_nodes=np.asarray(density.pdf(nodes)),
        fp_nodes=np.asarray(density.pdf_d1(nodes)),
    )


def low_noise_convolutions(profile: DensityProfile, x, t: float,
                           block: int = 256):
    """(phi_t * fhat)(x) and int phi_t(x - mu) fhat'(mu) dmu.

    phi_t is effectively supported on +-40 sqrt(t); each block of query
    points only touches the node band inside that reach, which keeps the
    work proportional to the overlap instead of |x| * |nodes|.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    order = np.argsort(x, kind="stable")
    xs = x[order]
    nodes = profile.nodes
    wf = profile.weights * profile.f_nodes
    wfp = profile.weights * profile.fp_nodes
    reach = 40.0 * math.sqrt(t)
    conv_p = np.zeros(len(x))
    conv_fp = np.zeros(len(x))
    for i in range(0, len(xs), block):
        xb = xs[i:i + block]
        lo = np.searchsorted(nodes, xb[0] - reach)
        hi = np.searchsorted(nodes, xb[-1] + reach)
        if hi <= lo:
            continue
        phi = _pdf_arr(xb[:, None] - nodes[None, lo:hi], t)
        conv_p[order[i:i + block]] = phi @ wf[lo:hi]
        conv_fp[order[i:i + block]] = phi @ wfp[lo:hi]
    return conv_p, conv_fp


def score_low_smooth_profile(profile: DensityProfile, omega: bool, x,
                             t: float, c_d: float = C_D_LOWER,
                             C: float = REGION_CONSTANT):
    """Region-dispatched low-noise score from a density profile.

    D1: psi_hat / max(phi_t * fhat, eps).  D2 u D3: the raw ratio under
    Omega (falling back to the flat score where the denominator
    underflows), the flat score outright otherwise.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    conv_p, conv_fp = low_noise_convolutions(profile, x, t)
    psi_hat = (
        _pdf_arr(x + 1.0, t) * profile.f_left
        - _pdf_arr(x - 1.0, t) * profile.f_right
        + conv_fp
    )
    d1, _, _ = region_tags(x, t, C)
    out = np.empty(len(x))

    den1 = np.maximum(conv_p[d1], regularizer(x[d1], t, c_d))
    out[d1] = _finite_ratio(psi_hat[d1], den1, x[d1], t)

    rest = ~d1
    if omega:
        out[rest] = _finite_ratio(psi_hat[rest], conv_p[rest], x[rest], t)
    else:
        out[rest] = uniform_score(x[rest], t)
    return out


# ---------------------------------------------------------------------------
# Fitted models and dispatch
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScoreModel:
    """A fitted, regime-tagged estimator, evaluable at (x, t) within its
    regime.  Regime boundaries are recorded at fit time."""

    regime: str
    alpha: float
    n: int
    t_low: float
    t_switch_high: float
    data: Dataset | None = None
    c_d: float = C_D_LOWER
    C: float = REGION_CONSTANT
    kde: KdeModel | None = field(default=None, compare=False)
    omega: bool | None = None
    _profile_cache: dict = field(default_factory=dict, compare=False,
                                 repr=False)

    def _profile(self, t: float) -> DensityProfile:
        key = round(math.log(t), 12)
        if key not in self._profile_cache:
            self._profile_cache.clear()  # one t at a time is the hot pattern
            self._profile_cache[key] = profile_from_kde(self.kde, t)
        return self._profile_cache[key]

    def eval(self, x, t: float):
        regime = classify_regime(self.n, self.alpha, t, self.t_switch_high)
        if regime != self.regime:
            raise ValueError(
                f"model fitted for regime {self.regime!r} evaluated at "
                f"t={t} which belongs to {regime!r}"
            )
        if self.regime == REGIME_VERY_HIGH:
            return score_very_high(self.data, x, t, self.c_d)
        if self.regime == REGIME_HIGH:
            return score_high(self.data, x, t, self.c_d)
        if self.regime == REGIME_LOW_SMOOTH:
            return score_low_smooth_profile(
                self._profile(t), self.omega, x, t, self.c_d, self.C
            )
        return score_low_rough(x, t)


def dispatch(data: Dataset, alpha: float, t: float,
             c_d: float = C_D_LOWER, C: float = REGION_CONSTANT,
             t_switch_high: float = T_SWITCH_HIGH,
             c_h: float = 1.0) -> ScoreModel:
    """Select and fit the regime estimator for (n, t, alpha)."""
    n = data.n
    regime = classify_regime(n, alpha, t, t_switch_high)
    kde = None
    omega = None
    if regime == REGIME_LOW_SMOOTH:
        kde = fit_kde(data, alpha, c_h)
        omega = omega_event(kde, c_d)
    return ScoreModel(
        regime=regime,
        alpha=alpha,
        n=n,
        t_low=low_noise_threshold(n, alpha),
        t_switch_high=t_switch_high,
        data=data,
        c_d=c_d,
        C=C,
        kde=kde,
        omega=omega,
    )


@dataclass(frozen=True)
class FittedScore:
    """All-t estimator family on one dataset: the kernel model and Omega
    flag are fitted once, then evaluation dispatches on t."""

    data: Dataset
    alpha: float
    c_d: float = C_D_LOWER
    C: float = REGION_CONSTANT
    t_switch_high: float = T_SWITCH_HIGH
    c_h: float = 1.0
    kde: KdeModel | None = field(default=None, compare=False)
    omega: bool | None = None

    @classmethod
    def fit(cls, data: Dataset, alpha: float, c_d: float = C_D_LOWER,
            C: float = REGION_CONSTANT,
            t_switch_high: float = T_SWITCH_HIGH,
            c_h: float = 1.0) -> "FittedScore":
        kde = None
        omega = None
        if alpha >= 1.0:
            kde = fit_kde(data, alpha, c_h)
            omega = omega_event(kde, c_d)
        return cls(data=data, alpha=alpha, c_d=c_d, C=C,
                   t_switch_high=t_switch_high, c_h=c_h, kde=kde,
                   omega=omega)

    def eval(self, x, t: float):
        regime = classify_regime(self.data.n, self.alpha, t,
                                 self.t_switch_high)
        if regime == REGIME_VERY_HIGH:
            return score_very_high(self.data, x, t, self.c_d)
        if regime == REGIME_HIGH:
            return score_high(self.data, x, t, self.c_d)
        if regime == REGIME_LOW_SMOOTH:
            profile = profile_from_kde(self.kde, t)
            return score_low_smooth_profile(
                profile, self.omega, x, t, self.c_d, self.C
            )
        return score_low_rough(x, t)
