"""Closed-form exponent calculus for Liouville measures on the torus.

Everything in this module is an exact formula in the intermittency parameter
``gamma`` (valid for ``0 <= gamma < 2``): moment scaling exponents of the
multiplicative-chaos measure, Hoelder envelopes, the anomalous diffusion pair
used by the heat-kernel bounds, the short-time diagonal exponent ``nu``, the
Watabiki dimension, and the saddle-point rate of Laplace-type integrals.
No randomness and no grids enter here; the simulation modules import these
functions as their reference values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

__all__ = [
    "check_gamma",
    "zeta",
    "moment_exists",
    "alpha",
    "beta",
    "upper_pair",
    "chi_bracket",
    "nu",
    "nu_mid_branch_max",
    "psi",
    "h",
    "h_gamma",
    "watabiki_dh",
    "tube_margins",
    "optimal_tube_scale",
    "laplace_asymptote",
    "ExponentTable",
    "figure1_table",
]


def check_gamma(gamma):
    """Validate and return the intermittency parameter.

    Parameters
    ----------
    gamma : float
        Must satisfy ``0 <= gamma < 2`` (the subcritical regime where the
        chaos measure is nondegenerate).

    Returns
    -------
    float

    Raises
    ------
    ValueError
        If ``gamma`` lies outside ``[0, 2)`` or is not finite.
    """
    g = float(gamma)
    if not math.isfinite(g) or g < 0.0 or g >= 2.0:
        raise ValueError(f"gamma must lie in [0, 2), got {gamma!r}")
    return g


def zeta(gamma, p):
    """Moment scaling exponent ``zeta(p) = (2 + gamma^2/2) p - (gamma^2/2) p^2``.

    ``E[M(B(x, r))^p]`` scales like ``r**zeta(p)`` for small ``r``.  The
    value is computed for every real ``p``; positive moments are finite only
    for ``p < 4/gamma^2`` (see :func:`moment_exists`), and callers fitting
    empirical moments outside that range should treat the result as advisory.

    Parameters
    ----------
    gamma : float
    p : float
        Moment order (may be negative: negative moments are always finite).

    Returns
    -------
    float
    """
    g = check_gamma(gamma)
    p = float(p)
    return (2.0 + g * g / 2.0) * p - (g * g / 2.0) * p * p


def moment_exists(gamma, p):
    """Whether the ``p``-th positive moment of ball masses is finite.

    True iff ``p < 4/gamma^2`` (vacuously true at ``gamma = 0``), or for any
    ``p <= 0``.
    """
    g = check_gamma(gamma)
    p = float(p)
    if p <= 0.0 or g == 0.0:
        return True
    return p < 4.0 / (g * g)


def alpha(gamma):
    """Lower Hoelder exponent ``alpha = 2 (1 - gamma/2)^2`` of the measure.

    Ball masses satisfy ``M(B(x, r)) <= C r^(alpha - eps)`` uniformly, for
    every ``eps > 0``.
    """
    g = check_gamma(gamma)
    return 2.0 * (1.0 - g / 2.0) ** 2


def beta(gamma, u):
    """Anomalous exit-time exponent ``beta(u)`` evaluated at envelope ``u``.

    ``beta(u) = (gamma/sqrt(u) + sqrt(gamma^2/u + 2 + gamma^2/2))^2``.
    It is decreasing in ``u``; together with :func:`alpha` it forms the pair
    controlling the off-diagonal heat-kernel upper bound.

    Parameters
    ----------
    gamma : float
    u : float
        Positive Hoelder envelope value (typically ``alpha(gamma) - delta``).

    Returns
    -------
    float

    Raises
    ------
    ValueError
        If ``u <= 0``.
    """
    g = check_gamma(gamma)
    u = float(u)
    if not u > 0.0:
        raise ValueError(f"beta requires u > 0, got {u!r}")
    return (g / math.sqrt(u) + math.sqrt(g * g / u + 2.0 + g * g / 2.0)) ** 2


def upper_pair(gamma, delta):
    """The perturbed pair ``(alpha_delta, beta_delta)`` of the upper bound.

    ``alpha_delta = alpha(gamma) - delta`` and
    ``beta_delta = beta(gamma, alpha_delta) + delta``.  The off-diagonal
    upper bound with tail exponent ``beta_delta/(beta_delta - 1)`` holds for
    every ``0 < delta < alpha(gamma)``.

    Returns
    -------
    (float, float)
        ``(alpha_delta, beta_delta)``.
    """
    g = check_gamma(gamma)
    d = float(delta)
    a = alpha(g)
    if not 0.0 < d < a:
        raise ValueError(f"delta must lie in (0, alpha(gamma)) = (0, {a}), got {delta!r}")
    a_d = a - d
    return a_d, beta(g, a_d) + d


def chi_bracket(gamma, delta, eta):
    """Bracket ``[chi_min, chi_max]`` for the off-diagonal decay exponent.

    Fitting ``-log p_t(x, y) ~ t^(-chi)`` at fixed ``x != y``, the upper
    bound gives ``chi >= 1/(beta_delta - 1)`` and the lower bound gives
    ``chi <= 1/(1 + gamma^2/4 - eta)``.

    Parameters
    ----------
    gamma : float
    delta : float
        Upper-bound perturbation, ``0 < delta < alpha(gamma)``; ``delta = 0``
        is accepted as the limiting value.
    eta : float
        Lower-bound perturbation, ``0 < eta < gamma^2/4`` (``eta = 0``
        allowed as the limit; at ``gamma = 0`` only ``eta = 0`` is valid).

    Returns
    -------
    (float, float)
        ``(chi_min, chi_max)`` with ``chi_min <= chi_max``.
    """
    g = check_gamma(gamma)
    d = float(delta)
    e = float(eta)
    a = alpha(g)
    if not 0.0 <= d < a:
        raise ValueError(f"delta must lie in [0, alpha(gamma)), got {delta!r}")
    if e < 0.0 or (e > 0.0 and not e < g * g / 4.0):
        raise ValueError(f"eta must lie in [0, gamma^2/4), got {eta!r}")
    b_d = beta(g, a - d) + d
    chi_min = 1.0 / (b_d - 1.0)
    chi_max = 1.0 / (1.0 + g * g / 4.0 - e)
    return chi_min, chi_max


def nu(gamma):
    """Short-time diagonal lower-bound exponent ``nu(gamma)``.

    Piecewise in ``u = gamma^2``::

        nu = 1 + u/4                          for u in [0, 8/3]
        nu = 1 + u - (u/4) / (1 - u/4)        for u in (8/3, 3]
        nu = 4 - u                            for u in (3, 4)

    Continuous across both breakpoints.  Requires ``gamma^2 < 4``.
    """
    g = check_gamma(gamma)
    u = g * g
    if u <= 8.0 / 3.0:
        return 1.0 + u / 4.0
    if u <= 3.0:
        return 1.0 + u - (u / 4.0) / (1.0 - u / 4.0)
    return 4.0 - u


def nu_mid_branch_max(gamma):
    """Largest ``nu`` compatible with the tube system for ``gamma^2 in (8/3, 3]``.

    Setting the optimal tube scale (see :func:`optimal_tube_scale`) in the
    saturated feasibility margin gives the exact branch value
    ``1 + gamma^2 - (gamma^2/4)/(1 - gamma^2/4)``; exposed separately so the
    optimizing scale and the branch formula can be cross-checked.
    """
    g = check_gamma(gamma)
    u = g * g
    return 1.0 + u - (u / 4.0) / (1.0 - u / 4.0)


def psi(x):
    """Concave rate ``psi(x) = 2 sqrt(x) - x`` for ``x >= 0``."""
    x = float(x)
    if x < 0.0:
        raise ValueError(f"psi requires x >= 0, got {x!r}")
    return 2.0 * math.sqrt(x) - x


def h(a):
    """Running maximum ``h(a) = max_(0 <= x <= a) psi(x) = psi(min(a, 1))``.

    Nondecreasing from 0 to 1, constant equal to 1 for ``a >= 1``.
    """
    a = float(a)
    if a < 0.0:
        raise ValueError(f"h requires a >= 0, got {a!r}")
    return psi(min(a, 1.0))


def h_gamma(gamma, a):
    """Rescaled rate ``h_gamma(a) = (gamma^2/8) h(8 a / gamma^2)``.

    Takes values in ``[0, gamma^2/8]``, saturating for ``a >= gamma^2/8``.
    At ``gamma = 0`` the limiting value 0 is returned for every ``a >= 0``.
    """
    g = check_gamma(gamma)
    a = float(a)
    if a < 0.0:
        raise ValueError(f"h_gamma requires a >= 0, got {a!r}")
    if g == 0.0:
        return 0.0
    s = g * g / 8.0
    return s * h(a / s)


def watabiki_dh(gamma):
    """Watabiki dimension ``1 + gamma^2/4 + sqrt((1 + gamma^2/4)^2 + gamma^2)``.

    Equals 2 at ``gamma = 0`` and 4 at ``gamma = sqrt(8/3)``.
    """
    g = check_gamma(gamma)
    q = 1.0 + g * g / 4.0
    return q + math.sqrt(q * q + g * g)


def tube_margins(gamma, nu_value, beta1, beta_i=None):
    """Feasibility margins of the multi-scale tube system.

    All five closed-form constraints, returned as margins (``>= 0`` means the
    constraint holds).  ``beta_i`` defaults to ``beta1`` (single scale).

    Returns
    -------
    dict
        Keys ``"A0a"``, ``"A0b"``, ``"A0c"``, ``"A4a"``, ``"A4b"``; the first
        two additionally record which branch applies via the companion keys
        ``"A0a_applies"``/``"A0b_applies"`` (booleans: whether
        ``1/(1+beta_i)`` falls in that branch's range).

    Notes
    -----
    * ``A0a``: ``(1/2)(1 + gamma^2/4 - nu) + (1 - 3 gamma^2/8) beta_i`` for
      ``1/(1+beta_i) >= gamma^2/8``.
    * ``A0b``: ``(1/2)(1 + gamma^2 - nu) + (1+beta_i)(1 - gamma^2/4)
      - (gamma/sqrt(2)) sqrt(1+beta_i)`` for ``1/(1+beta_i) <= gamma^2/8``;
      implied by ``A0a`` on the shared boundary.
    * ``A0c``: ``(1/2)(1 - nu) + (1+beta1)(3 - gamma^2)/4``.
    * ``A4a``: ``(1+beta1) - nu/(2 - gamma^2/2)``.
    * ``A4b``: ``(2 + gamma^2/2) - nu``.
    """
    g = check_gamma(gamma)
    nu_v = float(nu_value)
    b1 = float(beta1)
    bi = b1 if beta_i is None else float(beta_i)
    if b1 <= 0.0 or bi <= 0.0:
        raise ValueError("tube scales beta1, beta_i must be positive")
    u = g * g
    inv = 1.0 / (1.0 + bi)
    return {
        "A0a": 0.5 * (1.0 + u / 4.0 - nu_v) + (1.0 - 3.0 * u / 8.0) * bi,
        "A0a_applies": inv >= u / 8.0,
        "A0b": 0.5 * (1.0 + u - nu_v)
        + (1.0 + bi) * (1.0 - u / 4.0)
        - (g / math.sqrt(2.0)) * math.sqrt(1.0 + bi),
        "A0b_applies": inv <= u / 8.0,
        "A0c": 0.5 * (1.0 - nu_v) + (1.0 + b1) * (3.0 - u) / 4.0,
        "A4a": (1.0 + b1) - nu_v / (2.0 - u / 2.0),
        "A4b": 2.0 + u / 2.0 - nu_v,
    }


def optimal_tube_scale(gamma):
    """Scale ``1 + beta`` minimizing the deep-branch margin, for ``gamma^2 < 4``.

    The ``A0b`` margin is minimized at ``1 + beta = (gamma^2/8)(1 - gamma^2/4)^(-2)``,
    which is the optimizing scale on the middle ``nu`` branch.
    """
    g = check_gamma(gamma)
    u = g * g
    if u >= 4.0:
        raise ValueError("optimal_tube_scale requires gamma^2 < 4")
    if u == 0.0:
        raise ValueError("optimal_tube_scale is undefined at gamma = 0")
    return (u / 8.0) / (1.0 - u / 4.0) ** 2


def laplace_asymptote(mu, nu_exp, c):
    """Saddle-point rate of ``-log Integral_0^inf exp(-lam t^nu - c/t^mu) dt``.

    For large ``lam`` the integral's negative log grows like
    ``rate * lam^exponent`` with::

        exponent = mu / (nu + mu)
        rate     = (mu c / nu)^(nu/(nu+mu)) * (1 + nu/mu)

    Parameters
    ----------
    mu, nu_exp, c : float
        All strictly positive.

    Returns
    -------
    (float, float)
        ``(exponent, rate)``.
    """
    m = float(mu)
    n = float(nu_exp)
    c = float(c)
    if m <= 0.0 or n <= 0.0 or c <= 0.0:
        raise ValueError("laplace_asymptote requires mu, nu, c > 0")
    exponent = m / (n + m)
    rate = (m * c / n) ** (n / (n + m)) * (1.0 + n / m)
    return exponent, rate


@dataclass
class ExponentTable:
    """Exponent curves tabulated on a gamma grid.

    Columns follow the dimension-bracket figure: the Watabiki curve plus the
    rigorous lower/upper curves ``1 + gamma^2/4`` and ``beta(alpha(gamma)) - 1``
    for the metric scaling exponent, and the diagonal exponent ``nu``.
    """

    gamma: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    dhu_lower: list = field(default_factory=list)
    dhu_upper: list = field(default_factory=list)
    dh_watabiki: list = field(default_factory=list)
    nu: list = field(default_factory=list)

    CSV_HEADER = "gamma,alpha,beta,dHu_lower,dHu_upper,dH_watabiki,nu"

    def rows(self):
        return zip(
            self.gamma,
            self.alpha,
            self.beta,
            self.dhu_lower,
            self.dhu_upper,
            self.dh_watabiki,
            self.nu,
        )

    def to_csv(self):
        """Render the table as a CSV string (shortest round-trip floats)."""
        lines = [self.CSV_HEADER]
        for row in self.rows():
            lines.append(",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(self.to_csv())


def figure1_table(gamma_grid):
    """Tabulate the exponent curves over ``gamma_grid``.

    Parameters
    ----------
    gamma_grid : iterable of float
        Values in ``[0, 2)``.

    Returns
    -------
    ExponentTable
        With ``dhu_lower <= dhu_upper`` pointwise (the bracket collapses to
        ``(1, 1)`` at ``gamma = 0``).
    """
    table = ExponentTable()
    for g in gamma_grid:
        g = check_gamma(g)
        a = alpha(g)
        b = beta(g, a)
        table.gamma.append(g)
        table.alpha.append(a)
        table.beta.append(b)
        table.dhu_lower.append(1.0 + g * g / 4.0)
        table.dhu_upper.append(b - 1.0)
        table.dh_watabiki.append(watabiki_dh(g))
        table.nu.append(nu(g))
    return table
