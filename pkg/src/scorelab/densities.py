"""Ground-truth test densities and their exact smoothed quantities.

The density family lives on [-1, 1], is bounded inside the universal box
[C_D_LOWER, C_D_UPPER], and comes in three kinds:

* ``uniform``      -- the flat density 1/2,
* ``bump``         -- 1/2 plus signed dilates of a smooth mean-zero bump,
* ``two_point_lin``-- 1/2 plus a linear tilt (the classic two-point pair).

The bump shape is the normalized derivative of the standard mollifier,
w(x) = N * d/dx exp(-1/(1-x^2)), which is C-infinity, supported on
[-1, 1], integrates to zero, and has the closed-form antiderivative
N * exp(-1/(1-x^2)) -- so CDFs are exact.

The smoothed quantities p(x,t) = (phi_t * f)(x), psi = d/dx p and the
score s = psi/p are computed from closed forms for the flat/linear parts
plus per-bump Gauss-Legendre quadrature (panel width min(rho/2, sqrt(t),
0.1)); psi uses the integration-by-parts form so that no 1/t factors
degrade small-t accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gaussian import (
    C_D_LOWER,
    C_D_UPPER,
    gaussian_pdf,
    interval_mass,
    uniform_score,
)
from .quadrature import grid_nodes

# Gaussian arguments beyond this many sigmas underflow; used to localize
# per-bump contributions.
_GAUSS_CUTOFF_SIGMAS = 40.0

DEFAULT_HOLDER_CONSTANT = 10.0


# ---------------------------------------------------------------------------
# Bump shape: normalized mollifier derivative
# ---------------------------------------------------------------------------

def _mollifier(y):
    """exp(-1/(1-y^2)) on (-1, 1), zero outside."""
    y = np.asarray(y, dtype=float)
    inside = np.abs(y) < 1.0
    u = np.where(inside, 1.0 - y * y, 1.0)
    with np.errstate(over="ignore"):
        val = np.exp(-1.0 / u)
    return np.where(inside, val, 0.0)


def _bump_raw(y):
    """d/dy exp(-1/(1-y^2)) = -2y exp(-1/u)/u^2 with u = 1-y^2."""
    y = np.asarray(y, dtype=float)
    inside = np.abs(y) < 1.0
    u = np.where(inside, 1.0 - y * y, 1.0)
    val = -2.0 * y * _mollifier(y) / (u * u)
    return np.where(inside, val, 0.0)


def _bump_raw_d1(y):
    """Second mollifier derivative: 2 exp(-1/u) (3u^2 - 6u + 2)/u^4."""
    y = np.asarray(y, dtype=float)
    inside = np.abs(y) < 1.0
    u = np.where(inside, 1.0 - y * y, 1.0)
    val = 2.0 * _mollifier(y) * (3.0 * u * u - 6.0 * u + 2.0) / u**4
    return np.where(inside, val, 0.0)


def _bump_raw_d2(y):
    """Third mollifier derivative: -4y exp(-1/u)(-6u^3+21u^2-14u+2)/u^6."""
    y = np.asarray(y, dtype=float)
    inside = np.abs(y) < 1.0
    u = np.where(inside, 1.0 - y * y, 1.0)
    poly = -6.0 * u**3 + 21.0 * u * u - 14.0 * u + 2.0
    val = -4.0 * y * _mollifier(y) * poly / u**6
    return np.where(inside, val, 0.0)


_BUMP_NORM_CACHE: list[float] = []


def bump_norm() -> float:
    """1 / sup|w_raw|, so that the normalized bump has sup-norm 1."""
    if not _BUMP_NORM_CACHE:
        ys = np.linspace(0.0, 1.0, 200001)
        vals = np.abs(_bump_raw(ys))
        i = int(np.argmax(vals))
        lo, hi = ys[max(i - 1, 0)], ys[min(i + 1, len(ys) - 1)]
        # golden-section polish of the grid maximum
        gr = (math.sqrt(5.0) - 1.0) / 2.0
        a, b = lo, hi
        for _ in range(80):
            c = b - gr * (b - a)
            d = a + gr * (b - a)
            if abs(_bump_raw(c)) > abs(_bump_raw(d)):
                b = d
            else:
                a = c
        _BUMP_NORM_CACHE.append(1.0 / abs(_bump_raw(0.5 * (a + b))))
    return _BUMP_NORM_CACHE[0]


def bump_shape(y):
    """The bump w: smooth, supported on [-1,1], mean zero, sup-norm 1."""
    return bump_norm() * _bump_raw(y)


def bump_shape_d1(y):
    """w'(y)."""
    return bump_norm() * _bump_raw_d1(y)


def bump_shape_d2(y):
    """w''(y)."""
    return bump_norm() * _bump_raw_d2(y)


def bump_antiderivative(y):
    """int_{-1}^{y} w = N * exp(-1/(1-y^2)); exact, vanishes at both ends."""
    return bump_norm() * _mollifier(y)


# ---------------------------------------------------------------------------
# Analytic densities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    """n i.i.d. draws plus the seed that produced them."""

    values: np.ndarray
    seed: int

    @property
    def n(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class AnalyticDensity:
    """A member of the compactly supported test family.

    kind: 'uniform' | 'bump' | 'two_point_lin'
    alpha: smoothness label used by estimators fitted to this density
    eps, rho: bump amplitude scale (contributes eps**alpha) and width
    centers, signs: bump locations and +-1/0 signs ('bump' kind only)
    """

    kind: str = "uniform"
    alpha: float = 2.0
    eps: float = 0.0
    rho: float = 1.0
    centers: tuple = ()
    signs: tuple = ()
    c_d: float = C_D_LOWER
    C_d: float = C_D_UPPER
    _sup: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if self.kind not in ("uniform", "bump", "two_point_lin"):
            raise ValueError(f"unknown density kind {self.kind!r}")
        if self.kind == "bump":
            if len(self.centers) != len(self.signs):
                raise ValueError("centers and signs must have equal length")
            if self.eps <= 0.0 or not 0.0 < self.rho:
                raise ValueError("bump density needs eps > 0 and rho > 0")
            for c in self.centers:
                if c - self.rho < -1.0 or c + self.rho > 1.0:
                    raise ValueError(
                        f"bump at {c} with width {self.rho} leaves [-1, 1]"
                    )
        if self.kind == "two_point_lin" and self.eps <= 0.0:
            raise ValueError("two_point_lin needs eps > 0")
        object.__setattr__(self, "_sup", self._compute_sup())
        self._validate_box()

    # -- evaluation ---------------------------------------------------------

    @property
    def amplitude(self) -> float:
        """The perturbation prefactor eps**alpha."""
        return self.eps**self.alpha if self.kind != "uniform" else 0.0

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) <= 1.0
        out = np.where(inside, 0.5, 0.0)
        if self.kind == "bump":
            a = self.amplitude
            for c, s in zip(self.centers, self.signs):
                if s:
                    out = out + np.where(
                        inside, a * s * bump_shape((x - c) / self.rho), 0.0
                    )
        elif self.kind == "two_point_lin":
            out = out + np.where(inside, self.amplitude * x / self.rho, 0.0)
        return out if out.ndim else float(out)

    def pdf_d1(self, x):
        """f' on the open support interior; zero outside."""
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) < 1.0
        out = np.zeros_like(x)
        if self.kind == "bump":
            a = self.amplitude / self.rho
            for c, s in zip(self.centers, self.signs):
                if s:
                    out = out + np.where(
                        inside, a * s * bump_shape_d1((x - c) / self.rho), 0.0
                    )
        elif self.kind == "two_point_lin":
            out = out + np.where(inside, self.amplitude / self.rho, 0.0)
        return out if out.ndim else float(out)

    def pdf_d2(self, x):
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) < 1.0
        out = np.zeros_like(x)
        if self.kind == "bump":
            a = self.amplitude / self.rho**2
            for c, s in zip(self.centers, self.signs):
                if s:
                    out = out + np.where(
                        inside, a * s * bump_shape_d2((x - c) / self.rho), 0.0
                    )
        return out if out.ndim else float(out)

    def cdf(self, x):
        """Exact distribution function; the bump antiderivative is closed form."""
        x = np.asarray(x, dtype=float)
        xc = np.clip(x, -1.0, 1.0)
        out = 0.5 * (xc + 1.0)
        if self.kind == "bump":
            a = self.amplitude * self.rho
            for c, s in zip(self.centers, self.signs):
                if s:
                    out = out + a * s * bump_antiderivative((xc - c) / self.rho)
        elif self.kind == "two_point_lin":
            out = out + self.amplitude * (xc * xc - 1.0) / (2.0 * self.rho)
        out = np.clip(out, 0.0, 1.0)
        return out if out.ndim else float(out)

    # -- construction-time checks -------------------------------------------

    def _grid_with_bump_detail(self, coarse=4096, per_bump=129):
        xs = [np.linspace(-1.0, 1.0, coarse)]
        if self.kind == "bump":
            for c in self.centers:
                xs.append(np.linspace(c - self.rho, c + self.rho, per_bump))
        return np.unique(np.concatenate(xs))

    def _compute_sup(self) -> float:
        if self.kind == "uniform":
            return 0.5
        g = self._grid_with_bump_detail()
        return float(np.max(self.pdf(g)))

    def _validate_box(self):
        g = self._grid_with_bump_detail()
        vals = self.pdf(g)
        lo, hi = float(np.min(vals)), float(np.max(vals))
        if lo < self.c_d - 1e-12 or hi > self.C_d + 1e-12:
            raise ValueError(
                f"density leaves [{self.c_d}, {self.C_d}]: range [{lo}, {hi}]"
            )

    def sup_density(self) -> float:
        return self._sup

    def holder_violation(self, L: float = DEFAULT_HOLDER_CONSTANT,
                         grid: int = 512) -> float:
        """Max over grid pairs of |f^(k)(x)-f^(k)(y)| - L|x-y|^(a-k), k=floor(a).

        Nonpositive return certifies membership in the Holder ball of
        radius L at the grid resolution.
        """
        k = int(math.floor(self.alpha))
        frac = self.alpha - k
        xs = np.linspace(-1.0 + 1e-9, 1.0 - 1e-9, grid)
        if k == 0:
            d = self.pdf(xs)
        elif k == 1:
            d = self.pdf_d1(xs)
        else:
            # analytic second derivative, central differences above that
            d = self.pdf_d2(xs)
            for _ in range(k - 2):
                dp = np.empty_like(d)
                dp[1:-1] = (d[2:] - d[:-2]) / (xs[2:] - xs[:-2])
                dp[0], dp[-1] = dp[1], dp[-2]
                d = dp
        diff = np.abs(d[:, None] - d[None, :])
        gap = np.abs(xs[:, None] - xs[None, :])
        np.fill_diagonal(gap, 1.0)
        np.fill_diagonal(diff, 0.0)
        return float(np.max(diff - L * gap**frac))

    # -- sampling -------------------------------------------------------------

    def sample(self, n: int, seed: int) -> Dataset:
        """Rejection sampling from the Uniform[-1,1] proposal.

        The envelope is the construction-time supremum times a 1.01 safety
        factor; draws are deterministic given the seed.
        """
        if n < 1:
            raise ValueError(f"need n >= 1, got {n}")
        rng = np.random.default_rng(seed)
        env = self._sup * 1.01
        out = np.empty(n)
        got = 0
        while got < n:
            m = max(256, int((n - got) * env * 2.2))
            xs = rng.uniform(-1.0, 1.0, m)
            us = rng.uniform(0.0, env, m)
            acc = xs[us < self.pdf(xs)]
            take = min(len(acc), n - got)
            out[got:got + take] = acc[:take]
            got += take
        return Dataset(values=out, seed=seed)

    # -- serialization ---------------------------------------------------------

    def to_config_text(self) -> str:
        lines = [
            f"kind={self.kind}",
            f"alpha={self.alpha!r}",
            f"eps={self.eps!r}",
            f"rho={self.rho!r}",
            "centers=" + ",".join(repr(c) for c in self.centers),
            "signs=" + ",".join(repr(s) for s in self.signs),
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_config_text(cls, text: str) -> "AnalyticDensity":
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"bad density config line: {line!r}")
            key, val = line.split("=", 1)
            kv[key.strip()] = val.strip()
        kind = kv.get("kind", "uniform")
        centers = tuple(
            float(v) for v in kv.get("centers", "").split(",") if v
        )
        signs = tuple(
            int(float(v)) for v in kv.get("signs", "").split(",") if v
        )
        return cls(
            kind=kind,
            alpha=float(kv.get("alpha", 2.0)),
            eps=float(kv.get("eps", 0.0) or 0.0),
            rho=float(kv.get("rho", 1.0) or 1.0),
            centers=centers,
            signs=signs,
        )


def uniform_density(alpha: float = 2.0) -> AnalyticDensity:
    return AnalyticDensity(kind="uniform", alpha=alpha)


def single_bump_density(alpha: float = 2.0, eps: float = 0.12,
                        rho: float = 0.9, center: float = 0.0,
                        sign: int = 1) -> AnalyticDensity:
    """Default smooth test density; parameters keep it inside the Holder
    ball of radius 10 for alpha = 2 (sup|f''| = eps^2 sup|w''| / rho^2)."""
    return AnalyticDensity(
        kind="bump", alpha=alpha, eps=eps, rho=rho,
        centers=(center,), signs=(sign,),
    )


def matched_rough_density(t: float, alpha: float = 0.5,
                          fill: float = 0.85) -> AnalyticDensity:
    """Bumps at the noise scale: rho = eps = sqrt(t), packed in the interior.

    This is the minimax-critical member of the rough class at noise level
    t; a fixed smooth density would not exhibit the t^(alpha-1) risk
    growth of the data-free estimator.
    """
    rho = math.sqrt(t)
    m = int(math.floor(fill / rho)) or 1
    centers = tuple((-(m - 1) + 2 * i) * rho for i in range(m))
    return AnalyticDensity(
        kind="bump", alpha=alpha, eps=rho, rho=rho,
        centers=centers, signs=(1,) * m,
    )


# ---------------------------------------------------------------------------
# Smoothed quantities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoisyDensityOracle:
    """Quadrature-grade p(x,t), psi(x,t), s(x,t) for an analytic density."""

    density: AnalyticDensity
    nodes_per_panel: int = 16

    def _bump_nodes(self, t: float):
        rho = self.density.rho
        width_mu = min(rho / 2.0, math.sqrt(t), 0.1)
        return grid_nodes(-1.0, 1.0, width_mu / rho, self.nodes_per_panel)

    def p_psi_m1(self, x, t: float):
        """Returns (p, psi, m1) with m1(x) = int mu phi_t(x-mu) f(mu) dmu.

        Flat and linear parts are closed forms; bump parts use shared
        Gauss-Legendre nodes per bump, localized to where the Gaussian
        factor is representable.  psi uses integration by parts.
        """
        if t <= 0.0:
            raise ValueError(f"need t > 0, got {t}")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        mass = interval_mass(-1.0, 1.0, x, t)
        phip = gaussian_pdf(x + 1.0, t)
        phim = gaussian_pdf(x - 1.0, t)

        p = 0.5 * mass
        psi = 0.5 * (phip - phim)
        m1 = 0.5 * (x * mass + t * (phip - phim))

        d = self.density
        if d.kind == "two_point_lin":
            a = d.amplitude / d.rho
            # int mu phi_t(x-mu) dmu and int mu^2 phi_t(x-mu) dmu on [-1,1]
            i1 = x * mass + t * (phip - phim)
            i2 = (
                x * x * mass
                + 2.0 * x * t * (phip - phim)
                + t * mass
                + t * ((x + 1.0) * phip - (x - 1.0) * phim)
            )
            p = p + a * i1
            psi = psi + a * (mass - phim - phip)
            m1 = m1 + a * i2
        elif d.kind == "bump":
            v, wv = self._bump_nodes(t)
            wvals = bump_shape(v)
            w1vals = bump_shape_d1(v)
            amp = d.amplitude
            cut = d.rho + _GAUSS_CUTOFF_SIGMAS * math.sqrt(t)
            for c, sgn in zip(d.centers, d.signs):
                if not sgn:
                    continue
                sel = np.abs(x - c) <= cut
                if not np.any(sel):
                    continue
                xs = x[sel]
                phi = gaussian_pdf(xs[:, None] - c - d.rho * v[None, :], t)
                base = amp * sgn * (phi * wv[None, :])
                p[sel] += d.rho * (base @ wvals)
                psi[sel] += base @ w1vals
                m1[sel] += d.rho * (base @ ((c + d.rho * v) * wvals))
        return p, psi, m1

    def p_psi_s(self, x, t: float):
        """(p, psi, s); where p underflows the score falls back to the
        flat-density closed form so it stays finite everywhere."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        p, psi, _ = self.p_psi_m1(x, t)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(p > 0.0, psi / np.where(p > 0.0, p, 1.0),
                         uniform_score(x, t))
        return p, psi, s

    def score(self, x, t: float):
        return self.p_psi_s(x, t)[2]

    def posterior_mean(self, x, t: float):
        """E[theta | theta + sqrt(t) Z = x]; Tweedie gives s = (E-x)/t."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        p, _, m1 = self.p_psi_m1(x, t)
        fallback = x + t * uniform_score(x, t)
        return np.where(p > 0.0, m1 / np.where(p > 0.0, p, 1.0), fallback)
