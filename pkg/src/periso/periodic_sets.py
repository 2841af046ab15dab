"""Periodized sets described by smooth phase functions.

A set ``Omega = {x : f(x) >= 0}`` is periodized when shifting by any standard
basis vector maps it onto its complement and so does the reflection
``x -> -x``.  Both follow from two identities on the phase function:

    f(x + v_i) = -f(x)        (antiperiodicity)
    f(-x)      = -f(x)        (oddness)

Every built-in family is a finite sum of ``sin(pi <m, x>)`` with all entries
of ``m`` odd integers, which satisfies both identities exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "PhaseFunction",
    "HalfSpaceSpec",
    "PERTURBATION_MODES",
    "make_half_space",
    "make_perturbed",
    "make_trig_sum",
    "validate_symmetry",
    "membership",
    "parse_family",
    "family_signs",
]


@dataclass(frozen=True)
class PhaseFunction:
    """Smooth odd, antiperiodic scalar field on R^n.

    ``evaluate`` and ``gradient`` act on arrays whose last axis has length
    ``dimension``; ``evaluate`` drops that axis, ``gradient`` keeps it.
    """

    dimension: int
    evaluate: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    gradient: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    description: str = ""

    def __call__(self, x):
        return self.evaluate(np.asarray(x, dtype=float))

    def grad(self, x):
        return self.gradient(np.asarray(x, dtype=float))

    def __neg__(self):
        return PhaseFunction(
            self.dimension,
            lambda x: -self.evaluate(x),
            lambda x: -self.gradient(x),
            f"-({self.description})",
        )


@dataclass(frozen=True)
class HalfSpaceSpec:
    """Sign vector ``(eps_1, ..., eps_n)`` of a periodized half space."""

    signs: tuple

    def __post_init__(self):
        signs = tuple(int(s) for s in self.signs)
        if not signs or any(s not in (-1, 1) for s in signs) or any(
            float(a) != float(b) for a, b in zip(signs, self.signs)
        ):
            raise ValueError(f"half-space signs must all be +1 or -1, got {self.signs!r}")
        object.__setattr__(self, "signs", signs)

    @property
    def dimension(self) -> int:
        return len(self.signs)

    @classmethod
    def ones(cls, n: int) -> "HalfSpaceSpec":
        return cls((1,) * n)

    @classmethod
    def parse(cls, text: str) -> "HalfSpaceSpec":
        try:
            values = [float(tok) for tok in text.split(",")]
        except ValueError:
            raise ValueError(f"bad sign list {text!r}") from None
        return cls(tuple(values))

    def label(self) -> str:
        return ",".join("+1" if s > 0 else "-1" for s in self.signs)


def make_trig_sum(terms: Sequence[tuple[float, Sequence[int]]], description: str = "") -> PhaseFunction:
    """Phase function ``sum_j c_j sin(pi <m_j, x>)``.

    Each frequency vector ``m_j`` must have odd integer entries; this is what
    makes the sum odd and antiperiodic.
    """
    coefs = np.array([c for c, _ in terms], dtype=float)
    freqs = np.array([list(m) for _, m in terms], dtype=float)
    if freqs.ndim != 2 or len(freqs) == 0:
        raise ValueError("need at least one term")
    if np.any(np.abs(np.mod(freqs, 2.0) - 1.0) > 0):
        raise ValueError("frequency entries must be odd integers")
    n = freqs.shape[1]

    def evaluate(x):
        x = np.asarray(x, dtype=float)
        phase = np.pi * (x @ freqs.T)
        return np.sin(phase) @ coefs

    def gradient(x):
        x = np.asarray(x, dtype=float)
        phase = np.pi * (x @ freqs.T)
        return np.pi * (np.cos(phase) * coefs) @ freqs

    return PhaseFunction(n, evaluate, gradient, description)


def make_half_space(spec: HalfSpaceSpec) -> PhaseFunction:
    """``f(x) = sin(pi sum_i eps_i x_i)``."""
    return make_trig_sum([(1.0, spec.signs)], f"halfspace:{spec.label()}")


def _mode_a(eps):
    # tripled frequency on the first coordinate
    return [(1.0, (3 * eps[0],) + tuple(eps[1:]))]


def _mode_b(eps):
    # tripled counter-diagonal: first coordinate against all the others
    return [(1.0, (3 * eps[0],) + tuple(-3 * e for e in eps[1:]))]


def _mode_c(eps):
    # tripled first coordinate with the second one reversed
    return [(1.0, (3 * eps[0], -eps[1]) + tuple(eps[2:]))]


#: mode id -> (minimum dimension, frequency builder from the base signs)
PERTURBATION_MODES = {
    "A": (1, _mode_a),
    "B": (2, _mode_b),
    "C": (2, _mode_c),
}


def make_perturbed(base: HalfSpaceSpec, mode: str, t: float) -> PhaseFunction:
    """Half space plus ``t`` times an odd antiperiodic perturbation.

    Modes, with ``eps`` the base signs and ``d = (eps_2 x_2 + ... + eps_n x_n)``:

    * ``A``: ``sin(pi (3 eps_1 x_1 + d))``
    * ``B``: ``sin(3 pi (eps_1 x_1 - d))``  (n >= 2)
    * ``C``: ``sin(pi (3 eps_1 x_1 - eps_2 x_2 + eps_3 x_3 + ...))``  (n >= 2)

    None of them factors through ``sin(pi <eps, x>)``, so for ``t != 0`` the
    zero set genuinely moves away from the half space.
    """
    key = str(mode).strip().upper()
    if key not in PERTURBATION_MODES:
        raise ValueError(f"unknown perturbation mode {mode!r}")
    t = float(t)
    if not abs(t) <= 1.0:
        raise ValueError("perturbation amplitude must satisfy |t| <= 1")
    min_dim, build = PERTURBATION_MODES[key]
    if base.dimension < min_dim:
        raise ValueError(f"mode {key} needs dimension >= {min_dim}")
    terms = [(1.0, base.signs)] + [(t * c, m) for c, m in build(base.signs)]
    return make_trig_sum(terms, f"perturbed:{key}:{t!r}:{base.label()}")


def validate_symmetry(f: PhaseFunction, samples: int = 1000, seed: int = 0, tol: float = 1e-12):
    """Check antiperiodicity and oddness on random points of [0, 1]^n.

    Returns ``(passed, worst_violation)``.
    """
    if samples < 100:
        raise ValueError("samples must be at least 100")
    if not tol > 0:
        raise ValueError("tol must be positive")
    rng = np.random.default_rng(seed)
    x = rng.random((int(samples), f.dimension))
    fx = f(x)
    worst = float(np.max(np.abs(f(-x) + fx)))
    for i in range(f.dimension):
        shifted = x.copy()
        shifted[:, i] += 1.0
        worst = max(worst, float(np.max(np.abs(f(shifted) + fx))))
    return worst <= tol, worst


def membership(f: PhaseFunction, x):
    """True where ``x`` lies in the closed set ``{f >= 0}``."""
    return f(x) >= 0.0


def parse_family(text: str, n: int, t: float | None = None) -> PhaseFunction:
    """Build a phase function from a family string.

    Grammar::

        halfspace:<s1>,...,<sn>            e.g. halfspace:+1,-1
        perturbed:<A|B|C>[:<t>][:<signs>]  e.g. perturbed:B:0.3

    For ``perturbed`` the amplitude may be omitted when ``t`` is passed
    separately; missing signs default to all +1.
    """
    parts = [p.strip() for p in text.strip().split(":")]
    kind = parts[0].lower()
    if kind == "halfspace":
        spec = HalfSpaceSpec.parse(parts[1]) if len(parts) > 1 and parts[1] else HalfSpaceSpec.ones(n)
        if len(parts) > 2 or spec.dimension != n:
            raise ValueError(f"family {text!r} does not describe a half space in dimension {n}")
        return make_half_space(spec)
    if kind == "perturbed":
        if len(parts) < 2 or len(parts) > 4:
            raise ValueError(f"bad family string {text!r}")
        mode = parts[1]
        amp = None
        signs = None
        for extra in parts[2:]:
            if "," in extra:
                signs = HalfSpaceSpec.parse(extra)
            else:
                try:
                    amp = float(extra)
                except ValueError:
                    raise ValueError(f"bad amplitude in family {text!r}") from None
        if amp is not None and t is not None:
            raise ValueError(f"family {text!r} fixes t but a sweep value was also given")
        amp = t if amp is None else amp
        if amp is None:
            raise ValueError(f"family {text!r} needs an amplitude")
        base = signs if signs is not None else HalfSpaceSpec.ones(n)
        if base.dimension != n:
            raise ValueError(f"family {text!r} does not match dimension {n}")
        return make_perturbed(base, mode, amp)
    raise ValueError(f"unknown family {text!r}")


def family_signs(text: str, n: int) -> HalfSpaceSpec:
    """Base half-space signs named by a family string (all +1 when omitted)."""
    for part in text.strip().split(":")[1:]:
        if "," in part or (text.strip().lower().startswith("halfspace") and part):
            return HalfSpaceSpec.parse(part)
    return HalfSpaceSpec.ones(n)
