"""
经典后处理：误码率估计、奇偶校验二分纠错、隐私放大

纠错是简化的 Cascade：每一轮打乱位置后按块比较奇偶，不一致的块用二分定位一个错误并翻转；
块大小逐轮加倍。每一个公开的奇偶位都计入 leakage_bits。
"""
import logging
import math
from typing import Any, Dict, List, Optional, Protocol, Tuple

import numpy as np
from scipy.signal import fftconvolve

from app.core.errors import DegenerateInputError, DegenerateSampleError, MalformedInputError
from app.core.rng import Rng
from app.core.security import key_fingerprint
from app.models.protocol import (
    AmplificationParams,
    EstimationResult,
    PassDisclosure,
    ReconciliationParams,
    ReconciliationResult,
)

logger = logging.getLogger(__name__)

FORWARD = "forward"
BACKWARD = "backward"


class ParityChannel(Protocol):
    def exchange(self, direction: str, payload_type: str, payload: Dict[str, Any]) -> None:
        ...


class CountingChannel:
    """不经过网络，只记录交换次数"""

    def __init__(self):
        self.messages: List[Tuple[str, str]] = []

    def exchange(self, direction: str, payload_type: str, payload: Dict[str, Any]) -> None:
        self.messages.append((direction, payload_type))


def bit_string(bits: np.ndarray) -> str:
    return "".join("1" if b else "0" for b in bits.tolist())


def estimate_qber(key_a: np.ndarray, key_b: np.ndarray, sample_fraction: float, rng: Rng) -> EstimationResult:
    if key_a.size != key_b.size:
        raise MalformedInputError(f"key lengths differ: {key_a.size} vs {key_b.size}")
    if not 0.0 < sample_fraction < 1.0:
        raise MalformedInputError(f"sample_fraction must lie in (0, 1), got {sample_fraction}")
    n = key_a.size
    k = int(round(n * sample_fraction))
    if k == 0:
        raise DegenerateSampleError(f"sample of {n} bits at fraction {sample_fraction} is empty")

    positions = rng.sample_positions(n, k)
    mismatches = int(np.count_nonzero(key_a[positions] != key_b[positions]))
    keep = np.ones(n, dtype=bool)
    keep[positions] = False
    return EstimationResult(
        qber=mismatches / k,
        remaining_a=key_a[keep],
        remaining_b=key_b[keep],
        disclosed=k,
        positions=positions,
    )


def _block_parities(bits: np.ndarray, block_size: int) -> np.ndarray:
    starts = np.arange(0, bits.size, block_size)
    return (np.add.reduceat(bits.astype(np.int64), starts) & 1).astype(np.uint8)


def _ordered(bits: np.ndarray, permutation: Optional[np.ndarray]) -> np.ndarray:
    return bits if permutation is None else bits[permutation]


def _bisect(
        reference: np.ndarray,
        fixed: np.ndarray,
        disclosure: PassDisclosure,
        mismatched: List[int],
        pass_index: int,
        channel: ParityChannel,
) -> Tuple[int, int]:
    """
    同一轮中所有不一致的块按层同时二分，每层一次往返，定位到的位置就地翻转。
    返回 (公开的奇偶位数, 消息数)。
    """
    n = reference.size
    ref = _ordered(reference, disclosure.permutation)
    fix = _ordered(fixed, disclosure.permutation)
    block_size = disclosure.block_size
    active = [(b * block_size, min((b + 1) * block_size, n)) for b in mismatched]
    leakage = 0
    messages = 0
    while any(hi - lo > 1 for lo, hi in active):
        level_parities = []
        narrowed = []
        for lo, hi in active:
            if hi - lo == 1:
                narrowed.append((lo, hi))
                continue
            mid = (lo + hi) // 2
            ref_left = int(ref[lo:mid].sum()) & 1
            fix_left = int(fix[lo:mid].sum()) & 1
            level_parities.append(ref_left)
            narrowed.append((lo, mid) if ref_left != fix_left else (mid, hi))
        leakage += len(level_parities)
        channel.exchange(FORWARD, "BISECT", {"pass": pass_index, "parities": "".join(map(str, level_parities))})
        channel.exchange(BACKWARD, "BISECT_ACK", {"pass": pass_index, "ranges": [list(r) for r in narrowed]})
        messages += 2
        active = narrowed

    for lo, _ in active:
        original = lo if disclosure.permutation is None else int(disclosure.permutation[lo])
        fixed[original] ^= 1
        disclosure.located.append((original, int(ref[lo])))
    disclosure.parities_disclosed += leakage
    return leakage, messages


def _mismatched_blocks(reference: np.ndarray, fixed: np.ndarray, disclosure: PassDisclosure) -> List[int]:
    fix_parities = _block_parities(_ordered(fixed, disclosure.permutation), disclosure.block_size)
    return np.flatnonzero(disclosure.reference_parities != fix_parities).tolist()


def reconcile(
        key_a: np.ndarray,
        key_b: np.ndarray,
        params: ReconciliationParams,
        channel: Optional[ParityChannel] = None,
        rng: Optional[Rng] = None,
) -> ReconciliationResult:
    """
    key_a 为参考方（链上位置靠前的一方），key_b 向其纠正。
    channel 收到每一次公开交换；rng 决定后续各轮的置换和验证标签密钥。

    每轮纠正后回溯：之前各轮中因此变成奇偶不一致的块再次二分，直到所有已完成的轮都一致。
    回溯只公开二分奇偶，顶层奇偶在各轮开始时已经公开。
    """
    if key_a.size != key_b.size:
        raise MalformedInputError(f"key lengths differ: {key_a.size} vs {key_b.size}")
    n = key_a.size
    if n == 0:
        raise DegenerateInputError("cannot reconcile zero-length keys")
    channel = channel or CountingChannel()
    rng = rng or Rng(0)

    reference = key_a.astype(np.uint8).copy()
    fixed = key_b.astype(np.uint8).copy()
    leakage = 0
    messages = 0
    disclosures: List[PassDisclosure] = []

    for pass_index in range(params.passes):
        block_size = min(params.block_size_initial * (2 ** pass_index), n)
        permutation = None if pass_index == 0 else rng.permutation(n)
        ref_parities = _block_parities(_ordered(reference, permutation), block_size)
        leakage += ref_parities.size
        disclosure = PassDisclosure(
            permutation=permutation,
            block_size=block_size,
            reference_parities=ref_parities,
            parities_disclosed=int(ref_parities.size),
        )
        disclosures.append(disclosure)
        channel.exchange(FORWARD, "PARITY", {"pass": pass_index, "block": block_size, "parities": bit_string(ref_parities)})
        mismatched = _mismatched_blocks(reference, fixed, disclosure)
        channel.exchange(BACKWARD, "MISMATCH", {"pass": pass_index, "blocks": mismatched})
        messages += 2
        if not mismatched:
            continue
        disclosed, sent = _bisect(reference, fixed, disclosure, mismatched, pass_index, channel)
        leakage += disclosed
        messages += sent

        # 每次定位都纠正一个真实差异，差异数严格下降，因此回溯必然结束
        pending = True
        while pending:
            pending = False
            for earlier, previous in enumerate(disclosures):
                blocks = _mismatched_blocks(reference, fixed, previous)
                if blocks:
                    pending = True
                    disclosed, sent = _bisect(reference, fixed, previous, blocks, earlier, channel)
                    leakage += disclosed
                    messages += sent

    # 最终验证：双方交换同一密钥下的摘要
    r, s = rng.seed_material(), rng.seed_material()
    tag_a = key_fingerprint(reference, r, s, params.verification_tag_bits)
    tag_b = key_fingerprint(fixed, r, s, params.verification_tag_bits)
    channel.exchange(FORWARD, "VERIFY", {"tag": format(tag_a, "x")})
    channel.exchange(BACKWARD, "VERIFY_RESULT", {"match": tag_a == tag_b})
    messages += 2

    aborted = tag_a != tag_b
    if aborted:
        logger.debug(f"Reconciliation of {n} bits aborted after {params.passes} passes")
    return ReconciliationResult(
        key_a=None if aborted else reference,
        key_b=None if aborted else fixed,
        leakage_bits=leakage,
        aborted=aborted,
        passes=disclosures,
        messages=messages,
    )


def default_compression(n: int, qber: float, leakage: int) -> int:
    # round 去掉浮点噪声，例如 2 * 0.05 * 1000
    return max(0, n - leakage - math.ceil(round(2 * qber * n, 9)))


def output_length(n: int, qber: float, leakage: int, params: AmplificationParams) -> int:
    rule = params.compression_function or default_compression
    return min(n, max(0, int(rule(n, qber, leakage))))


def toeplitz_hash(key: np.ndarray, m: int, seed: int) -> np.ndarray:
    """m×n 随机 Toeplitz 矩阵（由 m+n-1 个种子比特确定）乘以密钥，模 2"""
    n = key.size
    if m == 0 or n == 0:
        return np.zeros(0, dtype=np.uint8)
    diagonal = Rng(seed).bits(m + n - 1).astype(np.float64)
    product = fftconvolve(diagonal, key.astype(np.float64))[n - 1:n - 1 + m]
    return (np.rint(product).astype(np.int64) & 1).astype(np.uint8)


def privacy_amplify(key: np.ndarray, leakage: int, qber: float, params: AmplificationParams, rng: Rng) -> np.ndarray:
    m = output_length(key.size, qber, leakage, params)
    seed = params.hash_seed if params.hash_seed is not None else rng.seed_material()
    return toeplitz_hash(key, m, seed)
