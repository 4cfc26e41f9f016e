"""Count-distribution kernel: log-densities, truncation, samplers, derivatives.

Supports Poisson and NB2 (negative binomial with mean mu and dispersion phi,
variance mu + mu^2/phi), each optionally zero-truncated or zero-one-truncated.
A Stirling-reduced NB2 log-likelihood term is provided for the bias
simulation; it must never be used for production fitting.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import integrate
from scipy.special import gammaln, polygamma, psi


class Family(str, Enum):
    POISSON = "poisson"
    NB2 = "nb2"


class Truncation(str, Enum):
    NONE = "none"
    ZERO = "zero"
    ZERO_ONE = "zero-one"


_SUPPORT_MIN = {Truncation.NONE: 0, Truncation.ZERO: 1, Truncation.ZERO_ONE: 2}

# CLI / config tokens
_FAMILY_TOKENS = {
    "po": (Family.POISSON, Truncation.NONE),
    "ztpo": (Family.POISSON, Truncation.ZERO),
    "zotpo": (Family.POISSON, Truncation.ZERO_ONE),
    "nb2": (Family.NB2, Truncation.NONE),
    "ztnb2": (Family.NB2, Truncation.ZERO),
    "zotnb2": (Family.NB2, Truncation.ZERO_ONE),
}


class ParameterError(ValueError):
    """Raised for nonpositive mu/phi or a missing dispersion parameter."""


class SupportError(ValueError):
    """Raised when a count lies below the truncated support."""


class SamplingError(RuntimeError):
    """Raised when truncated rejection sampling exceeds its iteration bound."""


class NumericalError(RuntimeError):
    """Raised on quadrature non-convergence or non-finite intermediate values."""


@dataclass(frozen=True)
class CountFamily:
    family: Family
    truncation: Truncation = Truncation.NONE

    @property
    def has_dispersion(self) -> bool:
        return self.family is Family.NB2

    @property
    def support_min(self) -> int:
        return _SUPPORT_MIN[self.truncation]

    @property
    def token(self) -> str:
        for tok, (fam, trunc) in _FAMILY_TOKENS.items():
            if fam is self.family and trunc is self.truncation:
                return tok
        raise KeyError(self)

    @staticmethod
    def from_token(token: str) -> "CountFamily":
        key = token.strip().lower()
        if key not in _FAMILY_TOKENS:
            raise ParameterError(f"unknown distribution token: {token!r}")
        fam, trunc = _FAMILY_TOKENS[key]
        return CountFamily(fam, trunc)


@dataclass(frozen=True)
class EtaPoint:
    mu: float
    phi: float | None = None


def _check_params(mu, phi, needs_phi: bool) -> None:
    mu = np.asarray(mu, dtype=float)
    if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
        raise ParameterError("mu must be positive and finite")
    if needs_phi:
        if phi is None:
            raise ParameterError("dispersion phi is required for NB2")
        phi = np.asarray(phi, dtype=float)
        if not np.all(np.isfinite(phi)) or np.any(phi <= 0):
            raise ParameterError("phi must be positive and finite")


def _log1mexp(a):
    """log(1 - exp(a)) for a < 0, stable for a near 0 and for large -a."""
    a = np.asarray(a, dtype=float)
    out = np.where(a > -np.log(2.0), np.log(-np.expm1(a)), np.log1p(-np.exp(a)))
    return out


# ---------------------------------------------------------------------------
# Log-pmf
# ---------------------------------------------------------------------------

def _poisson_logpmf(mu, m):
    return m * np.log(mu) - mu - gammaln(m + 1.0)


def _nb2_logpmf(mu, phi, m):
    return (
        gammaln(m + phi)
        - gammaln(phi)
        - gammaln(m + 1.0)
        - (m + phi) * np.log1p(mu / phi)
        + m * (np.log(mu) - np.log(phi))
    )


def _log_f0(family: Family, mu, phi):
    if family is Family.POISSON:
        return -np.asarray(mu, dtype=float)
    return -phi * np.log1p(mu / phi)


def _log_f1(family: Family, mu, phi):
    if family is Family.POISSON:
        return np.log(mu) - mu
    return _log_f0(family, mu, phi) + np.log(phi) + np.log(mu) - np.log(mu + phi)


def _log_trunc_denominator(fam: CountFamily, mu, phi):
    """log(1 - f(0) [- f(1)]) for the family's truncation."""
    if fam.truncation is Truncation.NONE:
        return np.zeros_like(np.asarray(mu, dtype=float))
    lf0 = _log_f0(fam.family, mu, phi)
    if fam.truncation is Truncation.ZERO:
        return _log1mexp(lf0)
    lf1 = _log_f1(fam.family, mu, phi)
    denom = -np.expm1(lf0) - np.exp(lf1)
    if np.any(denom <= 0):
        raise NumericalError("zero-one-truncated support carries no mass")
    return np.log(denom)


def log_pmf(family: CountFamily, eta: EtaPoint, m) -> float | np.ndarray:
    """log f(m; eta) for the chosen family and truncation."""
    _check_params(eta.mu, eta.phi, family.has_dispersion)
    m_arr = np.asarray(m)
    if np.any(m_arr < family.support_min):
        raise SupportError(
            f"m={m} below support minimum {family.support_min} "
            f"for truncation {family.truncation.value}"
        )
    mu = float(eta.mu)
    phi = None if eta.phi is None else float(eta.phi)
    if family.family is Family.POISSON:
        base = _poisson_logpmf(mu, m_arr)
    else:
        base = _nb2_logpmf(mu, phi, m_arr)
    out = base - _log_trunc_denominator(family, mu, phi)
    return float(out) if np.isscalar(m) else out


# ---------------------------------------------------------------------------
# Poisson-Gamma mixture oracle (independent of the NB2 closed form)
# ---------------------------------------------------------------------------

def mixture_pmf_oracle(mu: float, phi: float, m: int) -> float:
    """P(m) under Poisson(mu*u) mixed over u ~ Gamma(shape=phi, rate=phi).

    Evaluated by adaptive quadrature of the mixing integral; used as an
    independent cross-check on the NB2 closed form.
    """
    _check_params(mu, phi, True)
    if m < 0:
        raise SupportError("m must be nonnegative")

    # Substitute u = e^t so the integrand exp(shape*t - rate*e^t + const) is
    # smooth for every (mu, phi, m), including the u -> 0 singularity that
    # appears when m = 0 and phi < 1.
    shape = m + phi
    rate = mu + phi
    const = m * np.log(mu) - gammaln(m + 1.0) + phi * np.log(phi) - gammaln(phi)
    t_peak = np.log(shape / rate)
    w = np.sqrt(shape)  # curvature at the peak is -shape, so sd in t is 1/w
    log_scale = shape * t_peak - shape + const

    def f(s):
        t = t_peak + s / w
        return np.exp(shape * t - rate * np.exp(t) + const - log_scale) / w

    val, err = integrate.quad(
        f,
        -(50.0 + 50.0 / w),
        50.0,
        limit=300,
        epsabs=0.0,
        epsrel=1e-11,
        points=[0.0],
    )
    if not np.isfinite(val) or val <= 0 or err / val > 1e-9:
        raise NumericalError(
            f"quadrature did not converge: value={val}, abserr={err}"
        )
    return float(val * np.exp(log_scale))


# ---------------------------------------------------------------------------
# Stirling-reduced NB2 log-likelihood term (simulation comparison arm only)
# ---------------------------------------------------------------------------

def zhang_approx_loglik_term(mu, phi, m):
    """Reduced NB2 log-likelihood term with log-Gamma replaced by the
    truncated Stirling expansion; drops the Stirling remainder integral.
    """
    _check_params(mu, phi, True)
    mu = np.asarray(mu, dtype=float)
    m = np.asarray(m, dtype=float)
    out = (
        m * np.log(mu)
        - (m + phi) * np.log(mu + phi)
        + (m + phi - 0.5) * np.log(m + phi)
        + 0.5 * np.log(phi)
    )
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

_MAX_REJECTIONS = 10**6


def _sample_untruncated(family: Family, mu, phi, rng: np.random.Generator, size):
    if family is Family.POISSON:
        return rng.poisson(mu, size=size)
    return rng.negative_binomial(n=phi, p=phi / (phi + np.asarray(mu)), size=size)


def sample(family: CountFamily, eta: EtaPoint, rng: np.random.Generator) -> int:
    """One draw from the (possibly truncated) family."""
    _check_params(eta.mu, eta.phi, family.has_dispersion)
    lo = family.support_min
    for _ in range(_MAX_REJECTIONS):
        draw = int(_sample_untruncated(family.family, eta.mu, eta.phi, rng, None))
        if draw >= lo:
            return draw
    raise SamplingError(
        f"rejection sampling exceeded {_MAX_REJECTIONS} iterations at eta={eta}"
    )


def sample_many(
    family: CountFamily, mu: np.ndarray, phi: float | None, rng: np.random.Generator
) -> np.ndarray:
    """Vectorized draw, one count per mu entry, rejection per record."""
    _check_params(mu, phi, family.has_dispersion)
    mu = np.asarray(mu, dtype=float)
    lo = family.support_min
    out = _sample_untruncated(family.family, mu, phi, rng, mu.shape)
    if lo == 0:
        return out
    bad = out < lo
    tries = 0
    while np.any(bad):
        tries += 1
        if tries > _MAX_REJECTIONS:
            raise SamplingError("vectorized rejection sampling stalled")
        out[bad] = _sample_untruncated(family.family, mu[bad], phi, rng, int(bad.sum()))
        bad = out < lo
    return out


# ---------------------------------------------------------------------------
# Per-record derivatives of the log-likelihood term in (mu, phi)
# ---------------------------------------------------------------------------
# All fitting paths consume these through the mean-model chain rule; finite
# differences of the log-pmf are the independent cross-check in the tests.

@dataclass
class TermDerivs:
    ll: np.ndarray
    d_mu: np.ndarray
    d_mumu: np.ndarray
    d_phi: np.ndarray | None = None
    d_phiphi: np.ndarray | None = None
    d_muphi: np.ndarray | None = None


def _poisson_base_derivs(mu, m):
    ll = _poisson_logpmf(mu, m)
    return ll, m / mu - 1.0, -m / mu**2


def _nb2_base_derivs(mu, phi, m):
    ll = _nb2_logpmf(mu, phi, m)
    a = mu + phi
    d_mu = m / mu - (m + phi) / a
    d_mumu = -m / mu**2 + (m + phi) / a**2
    d_phi = psi(m + phi) - psi(phi) - np.log1p(mu / phi) + (mu - m) / a
    # d/dphi of d_phi
    d_phiphi = (
        polygamma(1, m + phi)
        - polygamma(1, phi)
        - 1.0 / a
        + (m - mu) / a**2
        + 1.0 / phi
    )
    d_muphi = (m - mu) / a**2
    return ll, d_mu, d_mumu, d_phi, d_phiphi, d_muphi


def _poisson_mass_derivs(mu, which: int):
    """f(which) and its first/second mu-derivatives for Poisson."""
    f0 = np.exp(-mu)
    if which == 0:
        return f0, -f0, f0, 0.0, 0.0, 0.0
    f1 = mu * f0
    return f1, (1.0 - mu) * f0, (mu - 2.0) * f0, 0.0, 0.0, 0.0


def _nb2_mass_derivs(mu, phi, which: int):
    """f(which) and its partials wrt (mu, phi) for NB2, via log-derivatives."""
    a = mu + phi
    g_mu = -phi / a
    g_mumu = phi / a**2
    g_phi = -np.log1p(mu / phi) + mu / a
    g_phiphi = 1.0 / phi - 1.0 / a - mu / a**2
    g_muphi = -mu / a**2
    if which == 0:
        logf = -phi * np.log1p(mu / phi)
        h_mu, h_mumu = g_mu, g_mumu
        h_phi, h_phiphi, h_muphi = g_phi, g_phiphi, g_muphi
    else:
        logf = -phi * np.log1p(mu / phi) + np.log(phi) + np.log(mu) - np.log(a)
        h_mu = g_mu + 1.0 / mu - 1.0 / a
        h_mumu = g_mumu - 1.0 / mu**2 + 1.0 / a**2
        h_phi = g_phi + 1.0 / phi - 1.0 / a
        h_phiphi = g_phiphi - 1.0 / phi**2 + 1.0 / a**2
        h_muphi = g_muphi + 1.0 / a**2
    f = np.exp(logf)
    return (
        f,
        f * h_mu,
        f * (h_mu**2 + h_mumu),
        f * h_phi,
        f * (h_phi**2 + h_phiphi),
        f * (h_mu * h_phi + h_muphi),
    )


def _trunc_mass(family: Family, mu, phi, truncation: Truncation):
    """S = f(0) [+ f(1)] and its partials; D = 1 - S is the normalizer."""
    if family is Family.POISSON:
        parts = [_poisson_mass_derivs(mu, 0)]
        if truncation is Truncation.ZERO_ONE:
            parts.append(_poisson_mass_derivs(mu, 1))
    else:
        parts = [_nb2_mass_derivs(mu, phi, 0)]
        if truncation is Truncation.ZERO_ONE:
            parts.append(_nb2_mass_derivs(mu, phi, 1))
    return [sum(p[k] for p in parts) for k in range(6)]


def term_derivatives(kind: str, mu, phi, m) -> TermDerivs:
    """Per-record log-likelihood term and its (mu, phi) derivatives.

    ``kind`` is a family token (po, ztpo, zotpo, nb2, ztnb2, zotnb2) or one
    of the simulation arms: ``zhang`` (Stirling-reduced NB2) and
    ``nb2-mixture`` (the exact Poisson-Gamma mixture arrangement; same
    likelihood as nb2, computed through the mixture identity).
    """
    mu = np.asarray(mu, dtype=float)
    m = np.asarray(m, dtype=float)

    if kind == "zhang":
        _check_params(mu, phi, True)
        a = mu + phi
        b = m + phi
        ll = m * np.log(mu) - b * np.log(a) + (b - 0.5) * np.log(b) + 0.5 * np.log(phi)
        d_mu = m / mu - b / a
        d_mumu = -m / mu**2 + b / a**2
        d_phi = -np.log(a) - b / a + np.log(b) + (b - 0.5) / b + 1.0 / (2.0 * phi)
        d_phiphi = (
            -(2.0 * mu + phi - m) / a**2
            + (b + 0.5) / b**2
            - 1.0 / (2.0 * phi**2)
        )
        d_muphi = (m - mu) / a**2
        return TermDerivs(ll, d_mu, d_mumu, d_phi, d_phiphi, d_muphi)

    if kind == "nb2-mixture":
        _check_params(mu, phi, True)
        # Exact mixture arrangement of the same NB2 likelihood.
        ll = (
            m * np.log(mu)
            + phi * np.log(phi)
            - gammaln(m + 1.0)
            - gammaln(phi)
            - (m + phi) * np.log(mu + phi)
            + gammaln(m + phi)
        )
        _, d_mu, d_mumu, d_phi, d_phiphi, d_muphi = _nb2_base_derivs(mu, phi, m)
        return TermDerivs(ll, d_mu, d_mumu, d_phi, d_phiphi, d_muphi)

    fam = CountFamily.from_token(kind)
    _check_params(mu, phi, fam.has_dispersion)
    if np.any(m < fam.support_min):
        raise SupportError(f"count below support for {kind}")

    if fam.family is Family.POISSON:
        ll, d_mu, d_mumu = _poisson_base_derivs(mu, m)
        d_phi = d_phiphi = d_muphi = None
    else:
        ll, d_mu, d_mumu, d_phi, d_phiphi, d_muphi = _nb2_base_derivs(mu, phi, m)

    if fam.truncation is not Truncation.NONE:
        s, s_mu, s_mumu, s_phi, s_phiphi, s_muphi = _trunc_mass(
            fam.family, mu, phi, fam.truncation
        )
        if fam.truncation is Truncation.ZERO:
            lf0 = _log_f0(fam.family, mu, phi)
            d = -np.expm1(lf0)
            log_d = _log1mexp(lf0)
        else:
            d = 1.0 - s
            if np.any(d <= 0):
                raise NumericalError("truncated support carries no mass")
            log_d = np.log(d)
        if np.any(d <= 0):
            raise NumericalError("truncated support carries no mass")
        ll = ll - log_d
        d_mu = d_mu + s_mu / d
        d_mumu = d_mumu + s_mumu / d + (s_mu / d) ** 2
        if fam.has_dispersion:
            d_phi = d_phi + s_phi / d
            d_phiphi = d_phiphi + s_phiphi / d + (s_phi / d) ** 2
            d_muphi = d_muphi + s_muphi / d + s_mu * s_phi / d**2
    return TermDerivs(ll, d_mu, d_mumu, d_phi, d_phiphi, d_muphi)


def kind_needs_phi(kind: str) -> bool:
    if kind in ("zhang", "nb2-mixture"):
        return True
    return CountFamily.from_token(kind).has_dispersion


def kind_support_min(kind: str) -> int:
    if kind in ("zhang", "nb2-mixture"):
        return 0
    return CountFamily.from_token(kind).support_min
