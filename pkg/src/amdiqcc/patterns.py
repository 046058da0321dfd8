"""Intensity-pattern algebra for paired early/late pulses.

A pair gives every user two pulses; the per-user total intensity label
(k_tot) is derived from the ordered (early, late) level pair, never from
the numeric sum, so "2nu" stays distinct from "mu" even if mu == 2*nu in
some configuration. A three-user pattern is the tuple of k_tot labels.
"""

from __future__ import annotations

from .params import ProtocolParams

# Per-pulse levels as stored in pulse records.
LEVEL_O, LEVEL_NU, LEVEL_MU, LEVEL_REF = 0, 1, 2, 3
LEVEL_NAMES = ("o", "nu", "mu", "ref")

# k_tot labels in a fixed order; code = index into this tuple.
TOTAL_LABELS = ("o", "nu", "2nu", "mu", "mu+nu", "2mu", "ref")

# (early, late) level pair -> k_tot label, exhaustive over {o, nu, mu}^2.
_PAIR_TO_TOTAL = {
    (LEVEL_O, LEVEL_O): "o",
    (LEVEL_NU, LEVEL_O): "nu",
    (LEVEL_O, LEVEL_NU): "nu",
    (LEVEL_NU, LEVEL_NU): "2nu",
    (LEVEL_MU, LEVEL_O): "mu",
    (LEVEL_O, LEVEL_MU): "mu",
    (LEVEL_MU, LEVEL_NU): "mu+nu",
    (LEVEL_NU, LEVEL_MU): "mu+nu",
    (LEVEL_MU, LEVEL_MU): "2mu",
    # Reference pulses pair only with each other inside a burst.
    (LEVEL_REF, LEVEL_REF): "ref",
}

# 2D lookup table: TOTAL_CODE[early_level, late_level] = label index.
TOTAL_CODE = [[255] * 4 for _ in range(4)]
for (e, l), lab in _PAIR_TO_TOTAL.items():
    TOTAL_CODE[e][l] = TOTAL_LABELS.index(lab)

_DECOMPOSITIONS = {
    "o": ((LEVEL_O, LEVEL_O),),
    "nu": ((LEVEL_NU, LEVEL_O), (LEVEL_O, LEVEL_NU)),
    "2nu": ((LEVEL_NU, LEVEL_NU),),
    "mu": ((LEVEL_MU, LEVEL_O), (LEVEL_O, LEVEL_MU)),
    "mu+nu": ((LEVEL_MU, LEVEL_NU), (LEVEL_NU, LEVEL_MU)),
    "2mu": ((LEVEL_MU, LEVEL_MU),),
}


def total_label(k_early: int, k_late: int) -> str:
    """Map an ordered (early, late) level-code pair to its k_tot label."""
    lab = _PAIR_TO_TOTAL.get((k_early, k_late))
    if lab is None:
        raise ValueError(f"no total-intensity label for levels ({k_early}, {k_late})")
    return lab


def decompositions(k_tot: str):
    """All (early, late) level pairs summing to the given k_tot label."""
    return _DECOMPOSITIONS[k_tot]


def level_prob(level: int, params: ProtocolParams) -> float:
    return (params.p_o, params.p_nu, params.p_mu)[level]


def per_user_weight(k_tot: str, params: ProtocolParams) -> float:
    """Probability that one user's (early, late) pulses sum to k_tot."""
    return sum(
        level_prob(e, params) * level_prob(l, params)
        for e, l in decompositions(k_tot)
    )


def emission_prob(pattern, params: ProtocolParams, p_s: float = 1.0) -> float:
    """Emission probability p_[k1,k2,k3] of a three-user intensity pattern.

    p_s is the filtering-scheme correction factor; it cancels in every
    count/probability ratio of the decoy analysis and defaults to 1.
    """
    w = 1.0
    for k in pattern:
        w *= per_user_weight(k, params)
    return w / p_s ** len(pattern)


def pattern_key(pattern) -> str:
    """Counts-document key for a pattern, e.g. ``n_[mu,nu,o]``."""
    return "n_[" + ",".join(pattern) + "]"


def parse_pattern_key(key: str):
    """Inverse of pattern_key; returns the label tuple or None."""
    if not (key.startswith("n_[") and key.endswith("]")):
        return None
    labels = tuple(key[3:-1].split(","))
    if all(l in TOTAL_LABELS for l in labels):
        return labels
    return None
