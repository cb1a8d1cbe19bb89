"""Independent reference values used by the tests."""
import numpy as np
from scipy.optimize import brentq


def laminate_normal_flux(p1, p2, s1, s2, theta1, load=1.0):
    """Constant normal flux t of a two-layer laminate under mean normal gradient ``load``.

    Solves s_i |g_i|^(p_i-2) g_i = t with theta1 g1 + theta2 g2 = load.
    """
    g = lambda t, p, s: np.sign(t) * (abs(t) / s) ** (1.0 / (p - 1.0))
    f = lambda t: theta1 * g(t, p1, s1) + (1 - theta1) * g(t, p2, s2) - load
    t = brentq(f, -1e6, 1e6, xtol=1e-15, rtol=1e-15)
    return t, g(t, p1, s1), g(t, p2, s2)


def _odd_modes(terms):
    k = np.arange(1, 2 * terms, 2.0)
    return k[:, None], k[None, :]


def poisson_square(x, y, terms=2000):
    """Series solution of -Lap u = 1 on the unit square with u = 0 on the boundary."""
    m, n = _odd_modes(terms)
    return float(np.sum(16 / (np.pi ** 4 * m * n * (m * m + n * n))
                        * np.sin(m * np.pi * x) * np.sin(n * np.pi * y)))


def poisson_energy(terms=2000):
    """int |grad u|^2 = int u for the same problem."""
    m, n = _odd_modes(terms)
    return float(np.sum(64 / (np.pi ** 6 * m * m * n * n * (m * m + n * n))))


# frozen values of the oracles above
LAMINATE_T_123 = 1.2192235935955849       # p=(2,3), sigma=(1,2), theta1=0.5
POISSON_CENTER = 0.0736713533
POISSON_ENERGY = 0.0351442537
