"""The three internal-mass forcing profiles with exact discrete mean correction.

Each profile is the second derivative of a 1-periodic displacement y(t):

    y1 = sin(pi t)**2            symmetric, C-infinity
    y2 = sin(pi t**2)**2         non-symmetric
    y3 = sin(pi t**2) - t(1-t)pi non-symmetric

All three accelerations integrate to zero over a period, but midpoint sampling
does not: the sampled mean is subtracted so the discrete average is exactly
zero, independent of the step count.  The forcing enters the body momentum
equation as 2*h**2 * yddot(t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

_PI = math.pi


class ForceKind(Enum):
    Y1 = "y1"
    Y2 = "y2"
    Y3 = "y3"


def _y1(t: float) -> float:
    return math.sin(_PI * t) ** 2


def _dy1(t: float) -> float:
    return _PI * math.sin(2.0 * _PI * t)


def _ddy1(t: float) -> float:
    return 2.0 * _PI * _PI * math.cos(2.0 * _PI * t)


def _y2(t: float) -> float:
    return math.sin(_PI * t * t) ** 2


def _dy2(t: float) -> float:
    return 2.0 * _PI * t * math.sin(2.0 * _PI * t * t)


def _ddy2(t: float) -> float:
    tt = t * t
    return 2.0 * _PI * math.sin(2.0 * _PI * tt) + 8.0 * _PI * _PI * tt * math.cos(2.0 * _PI * tt)


def _y3(t: float) -> float:
    return math.sin(_PI * t * t) - t * (1.0 - t) * _PI


def _dy3(t: float) -> float:
    return 2.0 * _PI * t * math.cos(_PI * t * t) - _PI * (1.0 - 2.0 * t)


def _ddy3(t: float) -> float:
    tt = t * t
    return 2.0 * _PI * math.cos(_PI * tt) - 4.0 * _PI * _PI * tt * math.sin(_PI * tt) + 2.0 * _PI


_TABLES = {
    ForceKind.Y1: (_y1, _dy1, _ddy1),
    ForceKind.Y2: (_y2, _dy2, _ddy2),
    ForceKind.Y3: (_y3, _dy3, _ddy3),
}


def _midpoints(n: int) -> list[float]:
    return [(2 * i - 1) / (2 * n) for i in range(1, n + 1)]


@dataclass(frozen=True)
class ForcingProfile:
    """One forcing profile tied to a time grid of N steps per unit period.

    `correction` is the scalar subtracted from every sampled acceleration so
    the midpoint-rule average vanishes.  It is computed on construction with
    compensated summation; the few-ulp remainder that no scalar shift can
    reach is removed inside midpoint_samples.
    """

    kind: ForceKind
    N: int
    period: float = 1.0
    correction: float = field(init=False, default=0.0)

    def __post_init__(self) -> None:
        if self.N < 2:
            raise ValueError("N must be at least 2")
        if self.period != 1.0:
            raise ValueError("the dimensionless period is fixed at 1")
        ddy = _TABLES[self.kind][2]
        samples = [ddy(t) for t in _midpoints(self.N)]
        # Fixed-point refinement of the scalar shift.  Rounding of the
        # per-sample subtractions quantizes the reachable sums, so this
        # stalls at a few ulps of the largest sample; midpoint_samples
        # removes that remainder exactly, sample by sample.
        corr = 0.0
        best = (abs(math.fsum(samples)), corr)
        for _ in range(8):
            residual = math.fsum(s - corr for s in samples)
            if abs(residual) < best[0]:
                best = (abs(residual), corr)
            if residual == 0.0:
                break
            corr += residual / self.N
        object.__setattr__(self, "correction", best[1])

    @staticmethod
    def from_name(name: str, N: int) -> "ForcingProfile":
        key = name.strip().lower()
        for kind in ForceKind:
            if kind.value == key:
                return ForcingProfile(kind, N)
        raise ValueError(f"unknown force {name!r}; expected y1, y2 or y3")

    def displacement(self, t: float) -> float:
        return _TABLES[self.kind][0](t % 1.0)

    def velocity(self, t: float) -> float:
        return _TABLES[self.kind][1](t % 1.0)

    def acceleration(self, t: float) -> float:
        """Analytic (uncorrected) acceleration at t, reduced mod 1."""
        return _TABLES[self.kind][2](t % 1.0)

    def corrected_acceleration(self, t: float) -> float:
        """Acceleration minus the discrete-mean correction; what the stepper uses."""
        return self.acceleration(t) - self.correction


def acceleration(profile: ForcingProfile, t: float) -> float:
    return profile.acceleration(t)


def velocity(profile: ForcingProfile, t: float) -> float:
    return profile.velocity(t)


def displacement(profile: ForcingProfile, t: float) -> float:
    return profile.displacement(t)


def _absorb_residual(values: list[float]) -> list[float]:
    """Cancel the summation residual of `values` exactly, in place of a shift.

    No scalar shift can do this: the map shift -> fsum(rounded differences)
    is a descending staircase whose treads can straddle zero without landing
    on it.  Instead fold the exact (rational) residual into single samples,
    largest magnitude first.  Every sample is an integer multiple of the ulp
    of the smallest nonzero one, and so is the residual, so once the residual
    is below half that spacing it is exactly zero.  The touched samples move
    by a few ulps at most.
    """
    out = list(values)
    residual = sum((Fraction(v) for v in out), Fraction(0))
    order = sorted((i for i in range(len(out)) if out[i] != 0.0), key=lambda i: -abs(out[i]))
    for _ in range(4):
        if residual == 0:
            return out
        for i in order:
            if residual == 0:
                break
            x = float(Fraction(out[i]) - residual)
            if x == out[i] or not math.isfinite(x):
                continue
            residual += Fraction(x) - Fraction(out[i])
            out[i] = x
    if residual != 0:
        raise ArithmeticError("summation residual did not cancel")
    return out


def midpoint_samples(profile: ForcingProfile, N: int | None = None) -> list[float]:
    """Corrected acceleration samples at the N midpoints t_{i-1/2}.

    The arithmetic mean of the returned list is exactly 0 under compensated
    summation: math.fsum of it returns 0.0.  If N differs from the profile's
    own step count, a profile with that N is built so the correction matches
    the sampling.
    """
    if N is not None and N != profile.N:
        profile = ForcingProfile(profile.kind, N)
    return _absorb_residual([profile.corrected_acceleration(t) for t in _midpoints(profile.N)])
