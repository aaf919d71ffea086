"""
中继 QKD 协议引擎

量子阶段：链首节点随机选基和比特制备量子比特，中间节点（Carol）随机选基截获重发，
链尾节点随机选基测量。每跳先经过可选的截获重发攻击，再经过信道噪声。
之后按受益对收集原始比特，依次做误码估计、纠错和隐私放大。
"""
import logging
from dataclasses import replace
from typing import Callable, Dict, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from app.core.errors import (
    CapabilityError,
    DegenerateInputError,
    DegenerateSampleError,
    MalformedInputError,
    ReconciliationAbort,
)
from app.core.postprocessing import (
    BACKWARD,
    FORWARD,
    CountingChannel,
    ParityChannel,
    bit_string,
    estimate_qber,
    output_length,
    privacy_amplify,
    reconcile,
    toeplitz_hash,
)
from app.core.quantum import apply_noise, intercept_resend, measure_qubit, prepare_qubit, random_basis
from app.core.rng import Rng
from app.models.protocol import (
    Chain,
    GroupAssignment,
    LinkAttack,
    Pair,
    PairKey,
    PairOutcome,
    ProtocolParams,
    PublicDiscussion,
    RoundRecord,
)
from app.models.qubit import NoiseModel

logger = logging.getLogger(__name__)

HopNoise = Union[NoiseModel, Sequence[NoiseModel]]


class Capable(Protocol):
    can_transmit: bool
    can_receive: bool


def check_capabilities(chain: Chain, capabilities: Mapping[str, Capable]) -> None:
    last = len(chain) - 1
    for position, node_id in enumerate(chain.nodes):
        node = capabilities.get(node_id)
        if node is None:
            raise CapabilityError(f"node {node_id} has no declared capabilities")
        if position < last and not node.can_transmit:
            raise CapabilityError(f"node {node_id} cannot transmit qubits at chain position {position}")
        if position > 0 and not node.can_receive:
            raise CapabilityError(f"node {node_id} cannot receive qubits at chain position {position}")


class QuantumPhase:
    """逐轮推进的量子阶段；多路复用时按轮交替调用 step()"""

    def __init__(
            self,
            chain: Chain,
            noise: HopNoise,
            rng: Rng,
            adversary: Optional[LinkAttack] = None,
            capabilities: Optional[Mapping[str, Capable]] = None,
    ):
        if capabilities is not None:
            check_capabilities(chain, capabilities)
        hops = chain.hops
        if isinstance(noise, NoiseModel):
            self.noise = [noise] * len(hops)
        else:
            self.noise = list(noise)
            if len(self.noise) != len(hops):
                raise MalformedInputError(f"expected {len(hops)} per-hop noise models, got {len(self.noise)}")
        if adversary is not None and not 0 <= adversary.hop < len(hops):
            raise MalformedInputError(f"attack hop {adversary.hop} outside chain of {len(hops)} hops")

        self.chain = chain
        self.adversary = adversary
        self.node_rngs = [rng.derive(f"node:{node_id}") for node_id in chain.nodes]
        self.link_rngs = [rng.derive(f"link:{a}>{b}") for a, b in hops]
        self.eve_rng = rng.derive("eve")
        self.next_index = 0

    def step(self, destination: Optional[str] = None) -> RoundRecord:
        last = len(self.chain) - 1
        source_rng = self.node_rngs[0]
        basis = random_basis(source_rng)
        bit = source_rng.bit()
        bases = [basis]
        bits = [bit]
        state = prepare_qubit(basis, bit)
        intercepted = False

        for hop in range(last):
            if self.adversary is not None and self.adversary.hop == hop:
                if self.eve_rng.bernoulli(self.adversary.fraction):
                    intercepted = True
                    _, state = intercept_resend(state, random_basis(self.eve_rng), self.eve_rng)
            state = apply_noise(state, self.noise[hop], self.link_rngs[hop])

            node_rng = self.node_rngs[hop + 1]
            basis = random_basis(node_rng)
            if hop + 1 < last:
                bit, state = intercept_resend(state, basis, node_rng)
            else:
                bit = measure_qubit(state, basis, node_rng)
            bases.append(basis)
            bits.append(bit)

        record = RoundRecord(self.next_index, tuple(bases), tuple(bits), intercepted, destination)
        self.next_index += 1
        return record


def run_quantum_phase(
        chain: Chain,
        n_rounds: int,
        noise: HopNoise,
        adversary: Optional[LinkAttack],
        rng: Rng,
        capabilities: Optional[Mapping[str, Capable]] = None,
) -> List[RoundRecord]:
    if n_rounds < 1:
        raise MalformedInputError(f"n_rounds must be >= 1, got {n_rounds}")
    phase = QuantumPhase(chain, noise, rng, adversary, capabilities)
    return [phase.step() for _ in range(n_rounds)]


def bit_matrix(records: Sequence[RoundRecord]) -> np.ndarray:
    return np.array([record.bits for record in records], dtype=np.uint8)


ChannelFactory = Callable[[Pair], ParityChannel]


def _positions_payload(positions: np.ndarray) -> List[int]:
    return [int(p) for p in positions]


def derive_pair_keys(
        records: Sequence[RoundRecord],
        assignment: GroupAssignment,
        params: ProtocolParams,
        rng: Rng,
        chain: Optional[Chain] = None,
        channel_factory: Optional[ChannelFactory] = None,
) -> Dict[Pair, PairOutcome]:
    if len(records) != len(assignment.rounds):
        raise MalformedInputError(f"{len(records)} records but {len(assignment.rounds)} assigned rounds")
    chain = chain or Chain(tuple(str(i) for i in range(assignment.chain_length)))
    bits = bit_matrix(records)
    outcomes: Dict[Pair, PairOutcome] = {}

    for span, rounds in sorted(assignment.pair_rounds().items()):
        pair = chain.pair(span)
        raw_a = bits[rounds, span[0]]
        raw_b = bits[rounds, span[1]]
        outcome = PairOutcome(pair=pair, span=span, rounds=len(rounds), raw_bits=len(rounds))
        outcomes[pair] = outcome
        pair_rng = rng.derive(f"pair:{pair[0]}:{pair[1]}")
        channel = channel_factory(pair) if channel_factory else CountingChannel()

        try:
            estimation = estimate_qber(raw_a, raw_b, params.sample_fraction, pair_rng)
        except (DegenerateSampleError, MalformedInputError) as e:
            outcome.failure = e.failure_class
            continue
        channel.exchange(FORWARD, "ESTIMATE", {
            "positions": _positions_payload(estimation.positions),
            "bits": bit_string(raw_a[estimation.positions]),
        })
        channel.exchange(BACKWARD, "ESTIMATE_RESULT", {"qber": estimation.qber})
        outcome.disclosed = estimation.disclosed
        outcome.qber = estimation.qber
        outcome.reconciliation_input = int(estimation.remaining_a.size)

        if params.qber_threshold is not None and estimation.qber > params.qber_threshold:
            outcome.failure = "qber-abort"
            logger.warning(f"Pair {pair[0]}~{pair[1]} qber {estimation.qber:.4f} exceeds {params.qber_threshold}")
            continue

        try:
            result = reconcile(estimation.remaining_a, estimation.remaining_b, params.reconciliation, channel, pair_rng)
            outcome.leakage_bits = result.leakage_bits
            if result.aborted:
                raise ReconciliationAbort(
                    f"pair {pair[0]}~{pair[1]} still differs after {params.reconciliation.passes} passes"
                )
        except (DegenerateInputError, ReconciliationAbort) as e:
            logger.warning(f"Pair {pair[0]}~{pair[1]} dropped: {e.failure_class}: {e.detail}")
            outcome.failure = e.failure_class
            continue

        n = outcome.reconciliation_input
        seed = pair_rng.seed_material()
        amplification = replace(params.amplification, hash_seed=seed)
        m = output_length(n, estimation.qber, result.leakage_bits, amplification)
        channel.exchange(FORWARD, "AMPLIFY", {"seed": seed, "length": m})
        final_a = privacy_amplify(result.key_a, result.leakage_bits, estimation.qber, amplification, pair_rng)
        final_b = privacy_amplify(result.key_b, result.leakage_bits, estimation.qber, amplification, pair_rng)
        if not np.array_equal(final_a, final_b):
            raise AssertionError(f"amplified keys diverged for {pair}")

        outcome.amplification_input = n
        outcome.compression = n - m
        outcome.final_bits = m
        outcome.key = PairKey(pair=pair, bits=final_a, qber_estimate=estimation.qber, leakage_bits=result.leakage_bits)
        outcome.discussion = PublicDiscussion(
            pair=pair,
            rounds=list(rounds),
            estimation_positions=estimation.positions,
            passes=result.passes,
            amplification_seed=seed,
            output_length=m,
        )
        logger.debug(f"Pair {pair[0]}~{pair[1]}: {len(rounds)} rounds -> {m} key bits")

    return outcomes


def surviving_keys(outcomes: Mapping[Pair, PairOutcome]) -> Dict[Pair, PairKey]:
    return {pair: o.key for pair, o in outcomes.items() if o.ok}


def carol_shadow_key(
        records: Sequence[RoundRecord],
        assignment: GroupAssignment,
        discussion: PublicDiscussion,
        carol_position: int,
        final_key: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, int]:
    """
    中继按公开讨论重放：去掉估计样本，采用二分定位处参考方的比特，再用同一 Toeplitz 矩阵压缩。
    返回重建结果和它与真实最终密钥的汉明距离（长度不同则计入差值）。
    """
    for round_index in discussion.rounds:
        if not any(carol_position in b.knowers for b in assignment.rounds[round_index]):
            raise MalformedInputError(f"position {carol_position} is not interior to the run of round {round_index}")

    raw = np.array([records[r].bits[carol_position] for r in discussion.rounds], dtype=np.uint8)
    keep = np.ones(raw.size, dtype=bool)
    keep[discussion.estimation_positions] = False
    shadow = raw[keep].copy()
    for disclosure in discussion.passes:
        for position, reference_bit in disclosure.located:
            shadow[position] = reference_bit

    reconstruction = toeplitz_hash(shadow, discussion.output_length, discussion.amplification_seed)
    if final_key is None:
        return reconstruction, 0
    common = min(final_key.size, reconstruction.size)
    distance = int(np.count_nonzero(final_key[:common] != reconstruction[:common]))
    distance += abs(final_key.size - reconstruction.size)
    return reconstruction, distance
