"""Closed-form model-design relative biases of the simplified estimators.

Under the crossed random-effects model and SI sampling in both dimensions,
``RB(simp1) = -1 / (1 + A1)``, ``RB(simp2) = -1 / (1 + A2)`` and
``RB(simp3) = 1 / (1 + A3)`` with::

    A1 = (1 - f_M) / (1 - f_D) * (n_D r_M + 1) / (n_M r_D + f_M)
    A2 = (1 - f_D) / (1 - f_M) * (n_M r_D + 1) / (n_D r_M + f_D)
    A3 = (n_D r_M + f_D) / (1 - f_D) + (n_M r_D + f_M) / (1 - f_M)

where ``r_M = sigma_M^2 / sigma_E^2``, ``r_D = sigma_D^2 / sigma_E^2`` and
``f = n / N`` are the sampling fractions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

__all__ = ["BiasInputs", "BiasResult", "closed_form_rb", "monotonicity_check", "EXPECTED_RESPONSE"]


@dataclass(frozen=True)
class BiasInputs:
    r_m: float
    r_d: float
    n_m: int
    n_d: int
    N_m: int
    N_d: int

    def __post_init__(self):
        if self.r_m < 0 or self.r_d < 0:
            raise ValueError("variance ratios must be non-negative")
        if not (1 <= self.n_m <= self.N_m and 1 <= self.n_d <= self.N_d):
            raise ValueError("need 1 <= n <= N in both dimensions")

    @classmethod
    def from_sigmas(cls, sigma_m: float, sigma_d: float, sigma_e: float, n_m: int, n_d: int, N_m: int, N_d: int) -> BiasInputs:
        if sigma_e <= 0:
            raise ValueError("sigma_e must be positive")
        return cls(sigma_m**2 / sigma_e**2, sigma_d**2 / sigma_e**2, n_m, n_d, N_m, N_d)

    @property
    def f_m(self) -> float:
        return self.n_m / self.N_m

    @property
    def f_d(self) -> float:
        return self.n_d / self.N_d


@dataclass(frozen=True)
class BiasResult:
    a1: float
    a2: float
    a3: float
    rb1: float
    rb2: float
    rb3: float

    def to_dict(self) -> dict:
        return asdict(self)


def closed_form_rb(inputs: BiasInputs) -> BiasResult:
    """Relative biases ``(rb1, rb2, rb3)`` as fractions (not percent)."""
    f_m, f_d = inputs.f_m, inputs.f_d
    if f_m >= 1.0 or f_d >= 1.0:
        raise ValueError("closed forms are undefined under a census in either dimension")
    x_m = inputs.n_d * inputs.r_m  # row-effect signal seen through the day sample
    x_d = inputs.n_m * inputs.r_d
    a1 = (1 - f_m) / (1 - f_d) * (x_m + 1) / (x_d + f_m)
    a2 = (1 - f_d) / (1 - f_m) * (x_d + 1) / (x_m + f_d)
    a3 = (x_m + f_d) / (1 - f_d) + (x_d + f_m) / (1 - f_m)
    return BiasResult(a1, a2, a3, -1 / (1 + a1), -1 / (1 + a2), 1 / (1 + a3))


# Sign of the change in (rb1, rb2, rb3) when the named input increases.
EXPECTED_RESPONSE = {
    "r_m": (+1, -1, -1),
    "n_d": (+1, -1, -1),
    "r_d": (-1, +1, -1),
    "n_m": (-1, +1, -1),
}


def _default_grid(inputs: BiasInputs, direction: str) -> list:
    if direction in ("r_m", "r_d"):
        return [0.01, 0.1, 0.5, 1.0, 2.0, 10.0, 100.0]
    cap = inputs.N_d if direction == "n_d" else inputs.N_m
    return [n for n in (5, 10, 100, 500) if n < cap]


def monotonicity_check(inputs: BiasInputs, direction: str, values=None) -> bool:
    """Whether rb1, rb2 and rb3 respond strictly monotonically, in the
    directions of ``EXPECTED_RESPONSE``, as ``direction`` runs over the
    increasing grid ``values``."""
    if direction not in EXPECTED_RESPONSE:
        raise ValueError(f"direction must be one of {sorted(EXPECTED_RESPONSE)}")
    values = sorted(values if values is not None else _default_grid(inputs, direction))
    rbs = np.array([
        (r.rb1, r.rb2, r.rb3) for r in (closed_form_rb(replace(inputs, **{direction: v})) for v in values)
    ])
    steps = np.sign(np.diff(rbs, axis=0))
    return bool(np.all(steps == np.array(EXPECTED_RESPONSE[direction])))
