import numpy as np
import pytest

from nlse_mi.domain import ChannelParams, make_grid


def params_for(m, m_total=None, beta_tilde=0.0, gamma=0.05, eps=0.02,
               l=1.0, p=1.0, n_z=64, w=2.0 * np.pi):
    """Channel parameters pinned by dimensionless knobs.

    With w = 2 pi, l = p = 1 the conveniences hold: P_ave = p, so
    gamma_tilde = gamma, and eps = q.
    """
    grid = make_grid(m, m_total if m_total is not None else m, w)
    beta = beta_tilde / (l * grid.w_inner**2)
    q = eps * p / l
    return ChannelParams(beta=beta, gamma=gamma, q=q, l=l, p=p, grid=grid,
                         n_z=n_z)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
