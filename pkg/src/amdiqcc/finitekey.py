"""Decoy-state finite-key analysis: from a counts table to a key length.

The chain estimates, in order: expected-value bounds of every observed
pattern count (Chernoff), the expected Z-basis single-photon pair count
via the four-intensity decoy combination, the X-basis single-photon
error count and (via a rescaling identity) pair count, real-value bounds
of those, the phase error rate with a random-sampling correction, and
finally the key length.

Conventions pinned here and verified against the bundled fixtures:

* beta = ln(1/eps); every Chernoff application uses eps_chernoff.
* The X-basis error-count combination consumes sifted-scale quantities.
  The error count is observed after sifting; the pattern counts are
  observed unsifted, so their expected-value bounds are converted with
  the deterministic filter acceptance 2/M (phases are announced,
  uniform and independent of detection, so acceptance is exactly 2/M
  for every photon-number component).
* The X single-photon pair count follows from the Z one by the emission
  rescaling identity, times the same 2/M.
* Lower bounds clamp at 0, error rates at [0, 1/2], the key length at 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .params import ProtocolParams, SecurityParams
from .patterns import emission_prob


class DomainError(ValueError):
    pass


class MissingPattern(KeyError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"counts table lacks required entry {key}")


class DegenerateYield(ArithmeticError):
    """X-basis single-photon yield bound hit zero; analysis aborts."""


def h2(x: float) -> float:
    """Binary Shannon entropy in bits, with h2(0) = h2(1) = 0."""
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"h2 argument {x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def beta_of(eps: float) -> float:
    if not 0.0 < eps < 1.0:
        raise DomainError(f"failure probability {eps} outside (0, 1)")
    return math.log(1.0 / eps)


def chernoff_real_bounds(expected: float, eps: float) -> tuple[float, float]:
    """Bounds on the realized value given its expectation.

    upper = <n> + beta/2 + sqrt(2 beta <n> + beta^2/4)
    lower = <n> - sqrt(2 beta <n>), clamped at 0.
    """
    if expected < 0:
        raise DomainError(f"negative expected value {expected}")
    beta = beta_of(eps)
    upper = expected + beta / 2.0 + math.sqrt(2.0 * beta * expected + beta**2 / 4.0)
    lower = max(expected - math.sqrt(2.0 * beta * expected), 0.0)
    return upper, lower


def chernoff_expected_bounds(observed: float, eps: float) -> tuple[float, float]:
    """Bounds on the expectation given an observed count.

    upper = n + beta + sqrt(2 beta n + beta^2)
    lower = max(n - beta/2 - sqrt(2 beta n + beta^2/4), 0)
    """
    if observed < 0:
        raise DomainError(f"negative observed count {observed}")
    beta = beta_of(eps)
    upper = observed + beta + math.sqrt(2.0 * beta * observed + beta**2)
    lower = max(observed - beta / 2.0 - math.sqrt(2.0 * beta * observed + beta**2 / 4.0), 0.0)
    return upper, lower


def gamma_u(n: float, k: float, lam: float, eps: float) -> float:
    """Random-sampling penalty converting a tested rate to a bound.

    n, k are the target and test sample sizes, lam the tested rate.
    Diverges logarithmically at lam in {0, 1}; callers clamp lam to
    [lam_min, 1 - lam_min] with lam_min = 1/(2(n+k)).
    """
    if n <= 0 or k <= 0:
        raise DomainError("sample sizes must be positive")
    if not 0.0 < lam < 1.0:
        raise DomainError(f"rate {lam} outside (0, 1)")
    a_max = max(n, k)
    g = (n + k) / (n * k) * math.log((n + k) / (2.0 * math.pi * n * k * lam * (1.0 - lam) * eps**2))
    num = (1.0 - 2.0 * lam) * a_max * g / (n + k) + math.sqrt(
        a_max**2 * g**2 / (n + k) ** 2 + 4.0 * lam * (1.0 - lam) * g
    )
    den = 2.0 + 2.0 * a_max**2 * g / (n + k) ** 2
    return num / den


def gamma_u_clamped(n: float, k: float, lam: float, eps: float) -> float:
    lam_min = 1.0 / (2.0 * (n + k))
    return gamma_u(n, k, min(max(lam, lam_min), 1.0 - lam_min), eps)


# Patterns entering the Z-basis single-photon combination.
_Y_PATTERNS = (
    ("nu", "nu", "nu"), ("o", "o", "o"),
    ("nu", "nu", "o"), ("nu", "o", "nu"), ("o", "nu", "nu"),
    ("nu", "o", "o"), ("o", "nu", "o"), ("o", "o", "nu"),
    ("mu", "mu", "mu"),
    ("mu", "mu", "o"), ("mu", "o", "mu"), ("o", "mu", "mu"),
    ("mu", "o", "o"), ("o", "mu", "o"), ("o", "o", "mu"),
)

# Patterns entering the X-basis error combination (plus the error count).
_T_PATTERNS = (
    ("2nu", "2nu", "2nu"),
    ("2nu", "2nu", "o"), ("2nu", "o", "2nu"), ("o", "2nu", "2nu"),
    ("2nu", "o", "o"), ("o", "2nu", "o"), ("o", "o", "2nu"),
    ("o", "o", "o"),
)

REQUIRED_PATTERNS = tuple(dict.fromkeys(_Y_PATTERNS + _T_PATTERNS))


@dataclass
class DecoyIntermediates:
    """Every bound produced along the way, for audit output."""

    exp_bounds: dict = field(default_factory=dict)  # pattern -> (upper, lower)
    y111z_expected: float = 0.0
    y111z: float = 0.0
    t111x_expected: float = 0.0
    t111x: float = 0.0
    y111x_expected: float = 0.0
    y111x: float = 0.0
    e111x: float = 0.0
    gamma: float = 0.0
    e111pz: float = 0.0


@dataclass(frozen=True)
class KeyAnalysisResult:
    y111z_lower: float
    e111pz_upper: float
    e_z: tuple[float, float, float]  # AB, AC, BC
    e_x: float
    n_z: int
    l_min: float
    n_pulses: int
    rate_bpp: float
    intermediates: DecoyIntermediates


def _pattern_counts(counts, names):
    out = {}
    for p in names:
        try:
            out[p] = counts.n(p)
        except KeyError:
            raise MissingPattern("n_[" + ",".join(p) + "]") from None
    return out


def y111z_lower(counts, params: ProtocolParams, sec: SecurityParams,
                inter: DecoyIntermediates | None = None,
                p_s: float = 1.0) -> tuple[float, float]:
    """Z-basis single-photon pair count: (expected lower, realized lower).

    Four-intensity decoy combination; each term takes the expected-value
    bound matching its sign so the total stays a valid lower bound.
    """
    mu, nu = params.mu, params.nu
    eps = sec.eps_chernoff
    obs = _pattern_counts(counts, _Y_PATTERNS)
    if inter is None:
        inter = DecoyIntermediates()

    def up(p):
        b = chernoff_expected_bounds(obs[p], eps)
        inter.exp_bounds[p] = b
        return b[0]

    def lo(p):
        b = chernoff_expected_bounds(obs[p], eps)
        inter.exp_bounds[p] = b
        return b[1]

    def prob(*labels):
        return emission_prob(labels, params, p_s=p_s)

    e = math.exp
    mu_bracket = mu**4 * (
        e(3 * nu) * lo(("nu", "nu", "nu")) / prob("nu", "nu", "nu")
        - e(2 * nu) * (
            up(("nu", "nu", "o")) / prob("nu", "nu", "o")
            + up(("nu", "o", "nu")) / prob("nu", "o", "nu")
            + up(("o", "nu", "nu")) / prob("o", "nu", "nu")
        )
        + e(nu) * (
            lo(("nu", "o", "o")) / prob("nu", "o", "o")
            + lo(("o", "nu", "o")) / prob("o", "nu", "o")
            + lo(("o", "o", "nu")) / prob("o", "o", "nu")
        )
        - up(("o", "o", "o")) / prob("o", "o", "o")
    )
    nu_bracket = nu**4 * (
        e(3 * mu) * up(("mu", "mu", "mu")) / prob("mu", "mu", "mu")
        - e(2 * mu) * (
            lo(("mu", "mu", "o")) / prob("mu", "mu", "o")
            + lo(("mu", "o", "mu")) / prob("mu", "o", "mu")
            + lo(("o", "mu", "mu")) / prob("o", "mu", "mu")
        )
        + e(mu) * (
            up(("mu", "o", "o")) / prob("mu", "o", "o")
            + up(("o", "mu", "o")) / prob("o", "mu", "o")
            + up(("o", "o", "mu")) / prob("o", "o", "mu")
        )
        - lo(("o", "o", "o")) / prob("o", "o", "o")
    )
    prefactor = e(-3 * mu) * prob("mu", "mu", "mu") / (nu**3 * (mu - nu))
    expected = max(prefactor * (mu_bracket - nu_bracket), 0.0)
    realized = chernoff_real_bounds(expected, eps)[1]
    inter.y111z_expected = expected
    inter.y111z = realized
    return expected, realized


def x_single_photon(counts, params: ProtocolParams, sec: SecurityParams,
                    y111z_expected: float,
                    inter: DecoyIntermediates | None = None,
                    p_s: float = 1.0):
    """X-basis single-photon quantities: (t upper, Y lower, e111x).

    The error-count combination runs on the sifted scale: the observed
    error count enters directly while unsifted pattern-count bounds are
    multiplied by the filter acceptance 2/M. Raises DegenerateYield when
    the yield lower bound vanishes.
    """
    nu, mu = params.nu, params.mu
    eps = sec.eps_chernoff
    sift = params.x_sift_fraction
    obs = _pattern_counts(counts, _T_PATTERNS)
    if inter is None:
        inter = DecoyIntermediates()

    def up(p):
        b = chernoff_expected_bounds(obs[p], eps)
        inter.exp_bounds.setdefault(p, b)
        return b[0] * sift

    def lo(p):
        b = chernoff_expected_bounds(obs[p], eps)
        inter.exp_bounds.setdefault(p, b)
        return b[1] * sift

    def prob(*labels):
        return emission_prob(labels, params, p_s=p_s)

    m_up = chernoff_expected_bounds(counts.err_x, eps)[0]
    e = math.exp
    p222 = prob("2nu", "2nu", "2nu")
    bracket = (
        e(6 * nu) * m_up / p222
        - e(4 * nu) * (
            lo(("2nu", "2nu", "o")) / (2 * prob("2nu", "2nu", "o"))
            + lo(("2nu", "o", "2nu")) / (2 * prob("2nu", "o", "2nu"))
            + lo(("o", "2nu", "2nu")) / (2 * prob("o", "2nu", "2nu"))
        )
        + e(2 * nu) * (
            up(("2nu", "o", "o")) / (2 * prob("2nu", "o", "o"))
            + up(("o", "2nu", "o")) / (2 * prob("o", "2nu", "o"))
            + up(("o", "o", "2nu")) / (2 * prob("o", "o", "2nu"))
        )
        - lo(("o", "o", "o")) / (2 * prob("o", "o", "o"))
    )
    t_expected = max(e(-6 * nu) * p222 * bracket, 0.0)

    ratio_x_over_z = ((2 * nu * e(-2 * nu)) ** 3 * p222) / (
        mu**3 * e(-3 * mu) * prob("mu", "mu", "mu")
    )
    y_expected = max(y111z_expected * ratio_x_over_z * sift, 0.0)

    t_upper = chernoff_real_bounds(t_expected, eps)[0]
    y_lower = chernoff_real_bounds(y_expected, eps)[1]
    inter.t111x_expected = t_expected
    inter.t111x = t_upper
    inter.y111x_expected = y_expected
    inter.y111x = y_lower
    if y_lower <= 0.0:
        raise DegenerateYield("X-basis single-photon yield lower bound is zero")
    e111x = min(max(t_upper / y_lower, 0.0), 0.5)
    inter.e111x = e111x
    return t_upper, y_lower, e111x


def key_length(counts, params: ProtocolParams, sec: SecurityParams,
               p_s: float = 1.0) -> KeyAnalysisResult:
    """Finite-size key length from an observed counts table.

    L = Y111z [1 - h2(e111pz)] - max h2(e_z) * f * n_z
        - log2(4/eps_cor) - 2 log2(2/(eps' eps_hat)) - 2 log2(1/(2 eps_PA)),
    clamped at 0. DegenerateYield along the way also yields L = 0.
    """
    inter = DecoyIntermediates()
    y_exp, y_real = y111z_lower(counts, params, sec, inter, p_s=p_s)
    n_z = counts.n(("mu", "mu", "mu"))
    e_z = counts.qber_z()
    e_x = counts.qber_x()
    degenerate = False
    try:
        _, y111x, e111x = x_single_photon(counts, params, sec, y_exp, inter, p_s=p_s)
        gamma = gamma_u_clamped(max(y_real, 1.0), y111x, e111x, sec.eps_e)
        e111pz = min(e111x + gamma, 0.5)
        inter.gamma = gamma
        inter.e111pz = e111pz
    except DegenerateYield:
        degenerate = True
        e111pz = 0.5
        inter.e111pz = e111pz

    logs = (
        math.log2(4.0 / sec.eps_cor)
        + 2.0 * math.log2(2.0 / (sec.eps_prime * sec.eps_hat))
        + 2.0 * math.log2(1.0 / (2.0 * sec.eps_PA))
    )
    ec = max(h2(x) for x in e_z) * params.f_ec * n_z
    l_min = y_real * (1.0 - h2(e111pz)) - ec - logs
    if degenerate:
        l_min = 0.0
    l_min = max(l_min, 0.0)
    n_pulses = counts.n_pulses
    rate = l_min / n_pulses if n_pulses else 0.0
    return KeyAnalysisResult(
        y111z_lower=y_real,
        e111pz_upper=e111pz,
        e_z=e_z,
        e_x=e_x,
        n_z=n_z,
        l_min=l_min,
        n_pulses=n_pulses,
        rate_bpp=rate,
        intermediates=inter,
    )
