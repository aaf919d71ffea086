from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple


class Basis(str, Enum):
    X = "X"
    Y = "Y"

    @property
    def conjugate(self) -> "Basis":
        return Basis.Y if self is Basis.X else Basis.X


class QubitState(NamedTuple):
    """(basis, bit)：X,0 ↔ +x；X,1 ↔ −x；Y,0 ↔ +y；Y,1 ↔ −y"""
    basis: Basis
    bit: int

    @property
    def label(self) -> str:
        sign = "+" if self.bit == 0 else "-"
        return f"{sign}{self.basis.value.lower()}"


@dataclass(frozen=True)
class NoiseModel:
    flip_probability: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError(f"flip_probability must lie in [0, 1], got {self.flip_probability}")


NOISELESS = NoiseModel(0.0)
