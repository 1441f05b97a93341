"""Shared fixtures and independent numeric oracles for the test suite."""

import numpy as np
import pytest
from scipy import integrate

import gedecomp as g

# 2013 national bracket table: boundaries in millions of yen, published
# relative frequencies, assumed survey size ~5 million households.
NATIONAL_BOUNDARIES = np.array([0, 1, 2, 3, 4, 5, 7, 10, 15, 20, np.inf])
NATIONAL_REL_FREQ = np.array([0.068, 0.139, 0.178, 0.157, 0.126, 0.159, 0.110, 0.047, 0.009, 0.006])
NATIONAL_SIZE = 5_000_000
PUBLISHED_GB2_2013 = {"a": 2.119, "b": 6.192, "p": 0.840, "q": 1.904}
PUBLISHED_THEIL_2013 = 0.24900
PUBLISHED_MLD_2013 = 0.27407


def national_sample() -> g.GroupedSample:
    return g.GroupedSample(NATIONAL_BOUNDARIES, NATIONAL_REL_FREQ * NATIONAL_SIZE, "jp2013")


@pytest.fixture(scope="session")
def national_gb2_fit() -> g.PosteriorDraws:
    """Full-length GB2 fit of the 2013 national table (shared across tests)."""
    return g.fit("gb2", national_sample(), g.McmcConfig(iterations=10_000, burnin=2_000, seed=20130))


# ---------------------------------------------------------------------------
# Independent oracles
# ---------------------------------------------------------------------------

def qp_reference(bayes, weights, phi, target, between) -> np.ndarray:
    """Equality-constrained QP solved through its dense KKT system.

    minimize sum phi_j (d_j - bayes_j)^2  s.t.  weights @ d = target - between
    """
    bayes = np.asarray(bayes, float)
    weights = np.asarray(weights, float)
    phi = np.asarray(phi, float)
    j = len(bayes)
    kkt = np.zeros((j + 1, j + 1))
    kkt[:j, :j] = 2.0 * np.diag(phi)
    kkt[:j, j] = weights
    kkt[j, :j] = weights
    rhs = np.concatenate([2.0 * phi * bayes, [target - between]])
    return np.linalg.solve(kkt, rhs)[:j]


def quad_moment(params, theta: float) -> float:
    """E[X**theta] by adaptive quadrature of x**theta * pdf, split at the scale."""
    split = getattr(params, "b", None) or float(np.exp(params.xi))
    f = lambda x: x**theta * params.pdf(x)
    lo, _ = integrate.quad(f, 0.0, split, limit=200)
    hi, _ = integrate.quad(f, split, np.inf, limit=200)
    return lo + hi


def quad_ge(params, theta: float) -> float:
    """Generalized entropy by adaptive quadrature of its defining integral."""
    mu = quad_moment(params, 1.0)
    if abs(theta) < 1e-9:
        f = lambda x: -np.log(x / mu) * params.pdf(x)
    elif abs(theta - 1.0) < 1e-9:
        f = lambda x: (x / mu) * np.log(x / mu) * params.pdf(x)
    else:
        f = lambda x: ((x / mu) ** theta - 1.0) / (theta * (theta - 1.0)) * params.pdf(x)
    split = getattr(params, "b", None) or float(np.exp(params.xi))
    lo, _ = integrate.quad(f, 0.0, split, limit=200)
    hi, _ = integrate.quad(f, split, np.inf, limit=200)
    return lo + hi


def mc_ge_with_se(x: np.ndarray, theta: float) -> tuple[float, float]:
    """Finite-sample GE of draws plus its delta-method standard error.

    The estimator is a smooth function of sample moments, so the SE comes
    from the sample covariance of the relevant moment contributions.
    """
    n = len(x)
    m_1 = float(x.mean())
    if abs(theta) < 1e-9:
        # T0 = log(m_1) - mean(log x)
        m_l = float(np.mean(np.log(x)))
        ge = np.log(m_1) - m_l
        grad = np.array([-1.0, 1.0 / m_1])
        cov = np.cov(np.vstack([np.log(x), x])) / n
    elif abs(theta - 1.0) < 1e-9:
        # T1 = m_g / m_1 - log(m_1), with m_g = mean(x log x)
        m_g = float(np.mean(x * np.log(x)))
        ge = m_g / m_1 - np.log(m_1)
        grad = np.array([1.0 / m_1, -m_g / m_1**2 - 1.0 / m_1])
        cov = np.cov(np.vstack([x * np.log(x), x])) / n
    else:
        c = theta * (theta - 1.0)
        m_t = float(np.mean(x**theta))
        ge = (m_t / m_1**theta - 1.0) / c
        grad = np.array([1.0 / m_1**theta, -theta * m_t / m_1 ** (theta + 1.0)]) / c
        cov = np.cov(np.vstack([x**theta, x])) / n
    return float(ge), float(np.sqrt(grad @ cov @ grad))
