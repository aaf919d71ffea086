"""
确定性随机数流

生成器为 numpy 的 PCG64，种子经 SeedSequence(entropy=master_seed, spawn_key=...) 派生。
每个派生流的 spawn_key 由标签（如 "node:Alice"、"link:Alice>C1"）经 BLAKE2b 取 8 字节得到，
因此同一 (主种子, 标签路径) 总是得到同一条流，不同标签得到相互独立的流。

单次抽样从 4096 个 float64 的缓冲区中依次取出，批量操作（置换、抽样）直接使用底层生成器。
"""
import hashlib
from typing import Tuple

import numpy as np

SEED_LIMIT = 1 << 64
BLOCK = 4096


def label_key(label: str) -> int:
    return int.from_bytes(hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest(), "big")


class Rng:
    def __init__(self, seed: int, stream: Tuple[int, ...] = ()):
        if not 0 <= seed < SEED_LIMIT:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.stream = stream
        self.generator = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=stream))
        )
        self._buffer = np.empty(0)
        self._pos = 0
        self.draws = 0

    def derive(self, label: str) -> "Rng":
        return Rng(self.seed, self.stream + (label_key(label),))

    def random(self) -> float:
        if self._pos >= len(self._buffer):
            self._buffer = self.generator.random(BLOCK)
            self._pos = 0
        value = self._buffer[self._pos]
        self._pos += 1
        self.draws += 1
        return float(value)

    def bit(self) -> int:
        return 1 if self.random() < 0.5 else 0

    def bernoulli(self, probability: float) -> bool:
        return self.random() < probability

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def sample_positions(self, n: int, k: int) -> np.ndarray:
        """无放回抽取 k 个位置，按升序返回"""
        return np.sort(self.generator.choice(n, size=k, replace=False))

    def bits(self, n: int) -> np.ndarray:
        return self.generator.integers(0, 2, size=n, dtype=np.uint8)

    def seed_material(self) -> int:
        return int(self.generator.integers(0, SEED_LIMIT, dtype=np.uint64))
