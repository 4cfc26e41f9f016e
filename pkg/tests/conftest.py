"""Shared fixtures: synthetic datasets, finite-difference helpers."""

import numpy as np
import pytest

from popest.dataio import Dataset, StratumRecord
from popest.distributions import CountFamily, EtaPoint, sample
from popest.meanmodel import DesignSpec, ModelSpec


COUNTRIES = ("Ukraine", "Georgia", "Belarus", "Vietnam", "India", "Moldova", "Nepal")
SEXES = ("F", "M")
AGES = ("0-30", "31-60", "61+")


def synth_records(
    seed: int,
    count: int,
    alpha: float = 0.7,
    beta: float = 0.8,
    phi: float = 2.5,
    token: str = "ztnb2",
    period: str = "Q1",
) -> list[StratumRecord]:
    """Strata with counts drawn from the given family at the power-link mean."""
    rng = np.random.default_rng(seed)
    fam = CountFamily.from_token(token)
    records = []
    for i in range(count):
        N = int(np.round(np.exp(rng.uniform(np.log(1e3), np.log(1e5)))))
        n = int(np.clip(np.round(N * rng.uniform(0.05, 0.5)), 1, N - 1))
        mu = N**alpha * (n / N) ** beta
        eta = EtaPoint(mu=mu, phi=phi if fam.has_dispersion else None)
        m = sample(fam, eta, rng)
        if m < 1:
            m = 1
        records.append(
            StratumRecord(
                period=period,
                # one country per block of six records, cycling all six
                # (sex, age) combinations inside the block keeps keys unique
                country=COUNTRIES[(i // 6) % len(COUNTRIES)],
                domain=(SEXES[i % 2], AGES[i % 3]),
                m=m,
                n=n,
                N=N,
            )
        )
    return records


def synth_dataset(seed: int, count: int, **kw) -> Dataset:
    return Dataset(
        records=tuple(synth_records(seed, count, **kw)),
        domain_names=("sex", "age"),
    )


@pytest.fixture
def ztnb2_dataset() -> Dataset:
    return synth_dataset(11, 40)


@pytest.fixture
def ztnb2_model() -> ModelSpec:
    return ModelSpec(family=CountFamily.from_token("ztnb2"), design=DesignSpec())


def fd_gradient(f, theta, h=1e-5):
    """Central finite differences of a scalar function."""
    theta = np.asarray(theta, dtype=float)
    g = np.zeros_like(theta)
    for j in range(len(theta)):
        hj = h * max(1.0, abs(theta[j]))
        up = theta.copy()
        dn = theta.copy()
        up[j] += hj
        dn[j] -= hj
        g[j] = (f(up) - f(dn)) / (2.0 * hj)
    return g


def fd_jacobian(g, theta, h=1e-5):
    """Central finite differences of a vector function, column per parameter."""
    theta = np.asarray(theta, dtype=float)
    k = len(theta)
    J = np.zeros((k, k))
    for j in range(k):
        hj = h * max(1.0, abs(theta[j]))
        up = theta.copy()
        dn = theta.copy()
        up[j] += hj
        dn[j] -= hj
        J[:, j] = (np.asarray(g(up)) - np.asarray(g(dn))) / (2.0 * hj)
    return J
