"""
量子层：制备、测量、信道噪声和截获重发

量子比特按 (basis, bit) 建模。同基测量是确定的；异基测量消耗一次随机抽样，结果均匀。
"""
from typing import Tuple

from app.core.rng import Rng
from app.models.qubit import Basis, NoiseModel, QubitState


def random_basis(rng: Rng) -> Basis:
    return Basis.X if rng.random() < 0.5 else Basis.Y


def prepare_qubit(basis: Basis, bit: int) -> QubitState:
    return QubitState(basis, bit)


def measure_qubit(state: QubitState, basis: Basis, rng: Rng) -> int:
    if basis == state.basis:
        return state.bit
    return rng.bit()


def apply_noise(state: QubitState, noise: NoiseModel, rng: Rng) -> QubitState:
    # 无论概率如何都恰好消耗一次抽样，保证流的对齐
    if rng.random() < noise.flip_probability:
        return QubitState(state.basis, 1 - state.bit)
    return state


def intercept_resend(state: QubitState, basis: Basis, rng: Rng) -> Tuple[int, QubitState]:
    bit = measure_qubit(state, basis, rng)
    return bit, prepare_qubit(basis, bit)
