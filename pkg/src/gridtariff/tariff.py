"""Closed-form regulatory pricing: permitted income, RPI-X ceiling, yardstick (scale) competition."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import GridTariffError


@dataclass(frozen=True)
class PermittedIncomeInputs:
    permitted_cost: float
    return_rate: float
    asset_base: float
    vat_rate: float

    def __post_init__(self):
        if not (0 <= self.return_rate <= 1 and 0 <= self.vat_rate <= 1):
            raise GridTariffError("rates must lie in [0, 1]", code="invalid-rate")
        if self.asset_base < 0:
            raise GridTariffError("asset base must be non-negative", code="invalid-asset-base")


@dataclass(frozen=True)
class PermittedIncome:
    allowed_return: float  # Y
    tax: float  # J
    income: float  # F


@dataclass(frozen=True)
class CeilingInputs:
    prev_price: float
    rpi: float
    x: float
    z: float = 0.0

    def __post_init__(self):
        if not self.prev_price > 0:
            raise GridTariffError("previous price must be positive", code="invalid-price")


@dataclass(frozen=True)
class ScaleCompetitionInputs:
    own_weight: float
    own_cost: float
    benchmark_cost: float | None = None
    peers: Sequence[tuple[float, float]] = ()  # (share, cost)

    def __post_init__(self):
        if not 0 <= self.own_weight <= 1:
            raise GridTariffError("own weight must lie in [0, 1]", code="invalid-weight")
        if (self.benchmark_cost is None) != bool(self.peers):
            raise GridTariffError("give exactly one of benchmark_cost or peers",
                                  code="invalid-benchmark")
        if self.peers:
            shares = [f for f, _ in self.peers]
            if any(f < 0 for f in shares) or abs(math.fsum(shares) - 1.0) > 1e-9:
                raise GridTariffError("peer shares must be non-negative and sum to 1",
                                      code="invalid-shares")


def permitted_income(inputs: PermittedIncomeInputs) -> PermittedIncome:
    y = inputs.return_rate * inputs.asset_base
    j = (inputs.permitted_cost + y) * inputs.vat_rate
    return PermittedIncome(y, j, inputs.permitted_cost + y + j)


def ceiling_price(inputs: CeilingInputs) -> float:
    """Next-period price cap; ``z`` is a signed external-factor adjustment."""
    return inputs.prev_price * (1.0 + inputs.rpi - inputs.x) + inputs.z


def scale_competition_price(inputs: ScaleCompetitionInputs) -> float:
    k = inputs.own_weight
    if inputs.peers:
        benchmark = math.fsum(f * c for f, c in inputs.peers)
    else:
        benchmark = inputs.benchmark_cost
    return k * inputs.own_cost + (1.0 - k) * benchmark
