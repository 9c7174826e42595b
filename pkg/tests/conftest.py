from __future__ import annotations

import numpy as np
import pytest

from ustat_gauss.kernels import make_polynomial
from ustat_gauss.marginals import MarginalModel, Normal, Uniform


def mixed_marginals(n: int) -> tuple[MarginalModel, ...]:
    out = []
    for i in range(n):
        s = 0.5 + i / max(n - 1, 1)
        mu = 0.3 * np.sin(i + 1.0)
        comp = Normal.of(mu, s) if i % 2 == 0 else Uniform.of(mu - s, mu + s)
        out.append(MarginalModel(i, (comp,)))
    return tuple(out)


def random_poly_family(n: int, p: int, degree: int, seed: int):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((p, degree + 1, degree + 1))
    c = (c + np.swapaxes(c, 1, 2)) / 2.0
    return make_polynomial(c, n=n)


@pytest.fixture
def small_poly():
    n, p = 6, 3
    return random_poly_family(n, p, 2, 11), mixed_marginals(n)
