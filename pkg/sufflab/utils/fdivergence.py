"""
The three f-generators (KL, chi-squared, squared Hellinger) and their calculus:
evaluation, derivative, inverse derivative, Fenchel conjugate and Bregman divergence.

Array methods on FGenerator are unchecked and vectorized; they are what the rest
of the package computes with. The module-level functions f_eval, f_conjugate and
bregman are the checked scalar entry points.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np
from scipy.special import rel_entr, xlogy

from sufflab.utils.errors import DomainError


class FKind(str, Enum):
    KL = "kl"
    CHISQ = "chisq"
    HELLINGER = "hellinger"


@dataclass(frozen=True)
class FGenerator:
    """
    Convex generator f with f(1) = 0

    KL:         f(t) = t log t
    ChiSquared: f(t) = (t - 1)^2 / 2
    Hellinger:  f(t) = 1 - sqrt(t)
    """

    kind: FKind

    @classmethod
    def from_token(cls, token: Union[str, "FGenerator", FKind]) -> "FGenerator":
        """Build a generator from a config/CLI token ("kl", "chisq", "hellinger")"""
        if isinstance(token, FGenerator):
            return token
        try:
            return cls(FKind(token))
        except ValueError:
            valid = ", ".join(k.value for k in FKind)
            raise DomainError(f"Unknown f-generator '{token}' (expected one of: {valid})") from None

    @property
    def token(self) -> str:
        return self.kind.value

    def f(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind is FKind.KL:
            return xlogy(t, t)
        if self.kind is FKind.CHISQ:
            return 0.5 * (t - 1.0) ** 2
        return 1.0 - np.sqrt(t)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            if self.kind is FKind.KL:
                return np.log(t) + 1.0
            if self.kind is FKind.CHISQ:
                return t - 1.0
            return -0.5 / np.sqrt(t)

    def second_derivative(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            if self.kind is FKind.KL:
                return 1.0 / t
            if self.kind is FKind.CHISQ:
                return np.ones_like(t)
            return 0.25 * t ** -1.5

    def inverse_derivative(self, s):
        """(f')^{-1}; for Hellinger only defined for s < 0 (nan elsewhere)"""
        s = np.asarray(s, dtype=float)
        if self.kind is FKind.KL:
            return np.exp(s - 1.0)
        if self.kind is FKind.CHISQ:
            return s + 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(s < 0, 0.25 / s ** 2, np.nan)

    def conjugate_derivative(self, s):
        """
        (f*)'(s), the maximizing t of the conjugate. Equals (f')^{-1} on the range
        of f'; the chi-squared value is clamped to 0 below s = -1.
        """
        s = np.asarray(s, dtype=float)
        if self.kind is FKind.CHISQ:
            return np.maximum(s + 1.0, 0.0)
        return self.inverse_derivative(s)

    def conjugate(self, s):
        """
        Fenchel conjugate sup_{t >= 0} {s t - f(t)}

        ChiSquared is the true dual over t >= 0: s^2/2 + s for s >= -1 and -1/2 below.
        Hellinger is +inf for s >= 0.
        """
        s = np.asarray(s, dtype=float)
        if self.kind is FKind.KL:
            return np.exp(s - 1.0)
        if self.kind is FKind.CHISQ:
            return np.where(s >= -1.0, 0.5 * s ** 2 + s, -0.5)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(s < 0, -1.0 - 0.25 / s, np.inf)

    def bregman(self, a, b):
        """B_f(a, b) = f(a) - f(b) - (a - b) f'(b), in a cancellation-free form per kind"""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self.kind is FKind.KL:
            return rel_entr(a, b) - a + b
        if self.kind is FKind.CHISQ:
            return 0.5 * (a - b) ** 2
        return (np.sqrt(a) - np.sqrt(b)) ** 2 / (2.0 * np.sqrt(b))


KL = FGenerator(FKind.KL)
CHISQ = FGenerator(FKind.CHISQ)
HELLINGER = FGenerator(FKind.HELLINGER)
GENERATORS = (KL, CHISQ, HELLINGER)


def as_generator(gen) -> FGenerator:
    return FGenerator.from_token(gen)


def f_eval(gen, t: float) -> float:
    """f(t) for t >= 0 (KL uses 0 log 0 = 0)"""
    gen = as_generator(gen)
    if not np.isfinite(t) or t < 0:
        raise DomainError(f"f is defined on t >= 0, got t={t}")
    return float(gen.f(t))


def f_conjugate(gen, s: float) -> float:
    """f*(s) = sup_{t >= 0} {s t - f(t)}"""
    gen = as_generator(gen)
    if not np.isfinite(s):
        raise DomainError(f"conjugate argument must be finite, got s={s}")
    if gen.kind is FKind.HELLINGER and s >= 0:
        raise DomainError(f"Hellinger conjugate is +inf for s >= 0, got s={s}")
    return float(gen.conjugate(s))


def bregman(gen, a: float, b: float) -> float:
    """Bregman divergence B_f(a, b) for a >= 0, b > 0"""
    gen = as_generator(gen)
    if a < 0:
        raise DomainError(f"Bregman divergence needs a >= 0, got a={a}")
    if b <= 0:
        raise DomainError(f"f' is undefined at b={b}; need b > 0")
    # clip roundoff below zero
    return max(float(gen.bregman(a, b)), 0.0)
