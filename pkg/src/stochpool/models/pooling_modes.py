"""
Pooling mode enumeration.
"""

import re
from dataclasses import dataclass
from enum import Enum


class PoolingKind(Enum):
    """The pooling functions a pool layer can apply."""

    AVERAGE = "avg"
    MAX = "max"
    STOCHASTIC = "stochastic"
    PROB_WEIGHT = "prob_weight"
    STOCHASTIC_N = "stochastic_n"


_STOCHASTIC_N = re.compile(r"^stochastic[-_]?(\d+)$")


@dataclass(frozen=True)
class PoolingMode:
    """
    A pooling mode, optionally carrying the Stochastic-N sample count.

    StochasticN is a routing tag: a single forward pass treats it as
    Stochastic, and the network's ensemble predictor averages `count`
    such passes.
    """

    kind: PoolingKind
    count: int = 1

    def __post_init__(self):
        if self.count < 1:
            raise ValueError(f"StochasticN count must be >= 1, got {self.count}")
        if self.kind is not PoolingKind.STOCHASTIC_N and self.count != 1:
            raise ValueError(f"Only stochastic_n carries a count, got {self.kind.value}")

    @classmethod
    def stochastic_n(cls, count: int) -> "PoolingMode":
        return cls(PoolingKind.STOCHASTIC_N, count)

    @classmethod
    def parse(cls, text: str) -> "PoolingMode":
        """
        Parse a mode name.

        Accepts "avg", "max", "stochastic", "prob_weight" (or "probweight",
        "prob-weight") and "stochastic-N" / "stochastic_n:N".
        """
        name = text.strip().lower()
        aliases = {
            "avg": PoolingKind.AVERAGE,
            "average": PoolingKind.AVERAGE,
            "max": PoolingKind.MAX,
            "stochastic": PoolingKind.STOCHASTIC,
            "prob_weight": PoolingKind.PROB_WEIGHT,
            "prob-weight": PoolingKind.PROB_WEIGHT,
            "probweight": PoolingKind.PROB_WEIGHT,
        }
        if name in aliases:
            return cls(aliases[name])
        if name.startswith("stochastic_n:"):
            return cls.stochastic_n(int(name.split(":", 1)[1]))
        match = _STOCHASTIC_N.match(name)
        if match:
            return cls.stochastic_n(int(match.group(1)))
        raise ValueError(f"Unknown pooling mode: {text!r}")

    @property
    def is_stochastic(self) -> bool:
        return self.kind in (PoolingKind.STOCHASTIC, PoolingKind.STOCHASTIC_N)

    @property
    def requires_rectified(self) -> bool:
        return self.kind in (PoolingKind.STOCHASTIC, PoolingKind.STOCHASTIC_N,
                             PoolingKind.PROB_WEIGHT)

    def __str__(self) -> str:
        if self.kind is PoolingKind.STOCHASTIC_N:
            return f"stochastic-{self.count}"
        return self.kind.value


AVERAGE = PoolingMode(PoolingKind.AVERAGE)
MAX = PoolingMode(PoolingKind.MAX)
STOCHASTIC = PoolingMode(PoolingKind.STOCHASTIC)
PROB_WEIGHT = PoolingMode(PoolingKind.PROB_WEIGHT)


class Phase(Enum):
    """Which of a pool layer's two modes a forward pass uses."""

    TRAIN = "train"
    TEST = "test"
