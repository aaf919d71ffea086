"""
会话记录：每个事件一行 JSON，字段顺序固定为模型声明顺序

replay_transcript 重新执行全部确定性检查：用记录下的密钥段重算每一跳的认证码、核对载荷在链路间的变化、
沿摘要链核对量子轮次、重新做基比对并核对原始比特摘要和密钥账目。
"""
import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
from pydantic import BaseModel, ValidationError

from app.core.auth import DeliveryOutcome, HopRecord
from app.core.errors import TranscriptCorruption, TranscriptMalformed
from app.core.security import compute_tag, tags_equal
from app.core.sifting import maximal_runs
from app.models.auth import AuthTag, ClassicalEnvelope, TagCoverage, TagSegment, pool_key
from app.models.protocol import Chain, Pair, group_label
from app.models.qubit import Basis
from app.schemas.transcript import (
    RECORD_TYPES,
    EnvelopeHop,
    PairAccounting,
    QuantumRound,
    RefreshAccounting,
    ScenarioHeader,
    SessionHeader,
    SessionOutcome,
    SiftRecord,
    TagRecord,
    TapRecord,
)

logger = logging.getLogger(__name__)


def tag_record(tag: AuthTag) -> TagRecord:
    return TagRecord(
        author=tag.author,
        covers=tag.covers.value,
        segments=[[s.verifier, s.key_offset, s.tag_bits] for s in tag.segments],
    )


def tag_from_record(record: TagRecord) -> AuthTag:
    return AuthTag(
        author=record.author,
        covers=TagCoverage(record.covers),
        segments=tuple(TagSegment(str(v), int(o), str(t)) for v, o, t in record.segments),
    )


class Transcript:
    """只追加的记录序列"""

    def __init__(self, records: Optional[List[BaseModel]] = None):
        self.records: List[BaseModel] = records or []

    def append(self, record: BaseModel) -> None:
        self.records.append(record)

    def extend(self, records: Iterable[BaseModel]) -> None:
        self.records.extend(records)

    def __len__(self) -> int:
        return len(self.records)

    def of_kind(self, kind: str, session_id: Optional[str] = None) -> List[BaseModel]:
        return [
            r for r in self.records
            if r.kind == kind and (session_id is None or r.session_id == session_id)
        ]

    def record_delivery(self, outcome: DeliveryOutcome, clock: int) -> None:
        envelope = outcome.envelope
        for hop in outcome.hops:
            self.append(hop_record(envelope, hop, clock))

    def lines(self) -> Iterator[str]:
        for record in self.records:
            yield record.model_dump_json()

    def write(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for line in self.lines():
                f.write(line)
                f.write("\n")

    @classmethod
    def parse(cls, lines: Iterable[str]) -> "Transcript":
        records = []
        for index, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                model = RECORD_TYPES[data["kind"]]
                records.append(model.model_validate(data))
            except (ValueError, KeyError, TypeError, ValidationError) as e:
                raise TranscriptMalformed(f"record {index} is not a valid transcript record: {e}")
        return cls(records)

    @classmethod
    def read(cls, path: Union[str, Path]) -> "Transcript":
        with open(path, "r", encoding="utf-8") as f:
            return cls.parse(f)


def hop_record(envelope: ClassicalEnvelope, hop: HopRecord, clock: int) -> EnvelopeHop:
    return EnvelopeHop(
        session_id=envelope.session_id,
        clock=clock,
        sequence=envelope.sequence,
        origin=envelope.origin,
        destination=envelope.destination,
        payload_type=hop.payload_type,
        payload=hop.payload.decode("latin-1"),
        node=hop.node,
        action=hop.action,
        author=hop.author,
        verifier=hop.verifier,
        key_offset=hop.key_offset,
        key_segment=hop.key_segment,
        tag_bits=hop.tag_bits,
        covers=hop.covers.value if hop.covers else None,
        prior_tags=[tag_record(t) for t in hop.prior_tags],
        ok=hop.ok,
        reason=hop.reason,
    )


def round_digest(
        previous: str, round_index: int, bases: str, bits: str, intercepted: bool = False, destination: Optional[str] = None,
) -> str:
    material = f"{previous}|{round_index}|{bases}|{bits}|{int(intercepted)}|{destination or ''}"
    return hashlib.blake2b(material.encode("utf-8"), digest_size=16).hexdigest()


def raw_digest(first: str, last: str) -> str:
    return hashlib.blake2b(f"{first}|{last}".encode("ascii"), digest_size=16).hexdigest()


def key_digest(bits: np.ndarray) -> str:
    material = f"{bits.size}|".encode("ascii") + np.packbits(bits.astype(np.uint8)).tobytes()
    return hashlib.blake2b(material, digest_size=16).hexdigest()


@dataclass
class ReplayReport:
    records: int = 0
    sessions: int = 0
    tags_checked: int = 0
    rounds_checked: int = 0
    pairs_checked: int = 0


def _tag_matches(record: EnvelopeHop, tag_bits: int, cost: int) -> bool:
    envelope = ClassicalEnvelope(
        session_id=record.session_id,
        sequence=record.sequence,
        origin=record.origin,
        destination=record.destination,
        payload_type=record.payload_type,
        payload=record.payload.encode("latin-1"),
    )
    prior = tuple(tag_from_record(t) for t in record.prior_tags)
    digest_input = envelope.digest_input(TagCoverage(record.covers), prior)
    key = np.unpackbits(np.frombuffer(bytes.fromhex(record.key_segment), dtype=np.uint8))[:cost]
    return tags_equal(compute_tag(key, digest_input, tag_bits), record.tag_bits)


def _delivery_key(record: EnvelopeHop) -> Tuple[str, int, str, str, str]:
    return record.session_id, record.sequence, record.origin, record.destination, record.payload_type


class DeliveryChecker:
    """
    逐跳核对投递记录：
    - 每个 tagged / verified 记录用它的密钥段和载荷重算认证码
    - 同一池同一偏移只对应一个密钥段，且只给一个标签使用
    - 一次投递内载荷只能在有篡改记录的链路上变化，delivered 之前必须有同一节点通过的校验
    """

    def __init__(self):
        self.open: Optional[EnvelopeHop] = None
        self.segments: Dict[Tuple[Pair, int], str] = {}
        self.tagged: Set[Tuple[Pair, int]] = set()
        self.altered: Counter = Counter()

    def tap(self, record: TapRecord) -> None:
        if record.altered:
            sender, receiver = record.link
            self.altered[(record.session_id, record.sequence, record.payload_type, sender, receiver)] += 1

    def hop(self, index: int, record: EnvelopeHop, tag_bits: int, cost: int) -> int:
        previous = self.open
        label = f"{record.payload_type}#{record.sequence} {record.origin}>{record.destination}"
        if previous is not None:
            if _delivery_key(previous) != _delivery_key(record):
                raise TranscriptCorruption(f"envelope fields change inside the delivery of {label}", index)
            if record.payload != previous.payload:
                link = (record.session_id, record.sequence, record.payload_type, previous.node, record.node)
                if previous.node == record.node or self.altered[link] < 1:
                    raise TranscriptCorruption(
                        f"payload of {label} changed between {previous.node} and {record.node} with no recorded tampering",
                        index,
                    )
                self.altered[link] -= 1

        checked = 0
        if record.action == "tagged":
            if record.key_segment is None or record.tag_bits is None or record.key_offset is None:
                raise TranscriptCorruption(f"tag by {record.author} on {label} carries no key segment", index)
            if not _tag_matches(record, tag_bits, cost):
                raise TranscriptCorruption(
                    f"tag by {record.author} for {record.verifier} on {label} does not match its payload and key segment",
                    index,
                )
            self._segment(index, record, tagging=True)
            checked = 1
        elif record.action == "verified":
            if record.key_segment is None or record.tag_bits is None:
                if record.ok:
                    raise TranscriptCorruption(f"{record.node} accepted {label} without a fresh key segment", index)
            else:
                matches = _tag_matches(record, tag_bits, cost)
                if matches != bool(record.ok):
                    raise TranscriptCorruption(
                        f"tag check by {record.node} on {label} recorded ok={record.ok}, recomputed {matches}",
                        index,
                    )
                self._segment(index, record, tagging=False)
                checked = 1
        elif record.action == "delivered":
            passed = previous is not None and previous.node == record.node and previous.action == "verified" and previous.ok
            if not passed or not record.ok:
                raise TranscriptCorruption(f"{label} delivered at {record.node} without a passing verification", index)

        self.open = None if record.action in ("delivered", "rejected") else record
        return checked

    def _segment(self, index: int, record: EnvelopeHop, tagging: bool) -> None:
        pair = pool_key(record.author, record.verifier)
        slot = (pair, record.key_offset)
        if self.segments.setdefault(slot, record.key_segment) != record.key_segment:
            raise TranscriptCorruption(
                f"pool {pair[0]}~{pair[1]} offset {record.key_offset} appears with two different key segments", index,
            )
        if tagging:
            if slot in self.tagged:
                raise TranscriptCorruption(f"pool {pair[0]}~{pair[1]} offset {record.key_offset} keys two tags", index)
            self.tagged.add(slot)


def _check_round(index: int, record: QuantumRound, header: SessionHeader, previous: str) -> None:
    width = len(header.chain)
    if len(record.bases) != width or len(record.bits) != width:
        raise TranscriptCorruption(f"round {record.round_index} of {record.session_id} does not span the chain", index)
    expected = round_digest(
        previous, record.round_index, record.bases, record.bits, record.intercepted, record.destination,
    )
    if record.digest != expected:
        raise TranscriptCorruption(f"round {record.round_index} of {record.session_id} breaks the digest chain", index)


def _check_sift(index: int, record: SiftRecord, header: SessionHeader, rounds: Sequence[QuantumRound]) -> None:
    chain = Chain(tuple(header.chain))
    counts: Dict[str, int] = {}
    pair_rounds: Dict[str, int] = {}
    raw: Dict[str, Tuple[List[str], List[str]]] = {}
    unused = 0
    for r in rounds:
        beneficiaries = maximal_runs([Basis(b) for b in r.bases])
        label = group_label(beneficiaries, chain)
        counts[label] = counts.get(label, 0) + 1
        if not beneficiaries:
            unused += 1
        for b in beneficiaries:
            first, last = chain.pair(b.span)
            key = f"{first}~{last}"
            pair_rounds[key] = pair_rounds.get(key, 0) + 1
            ends = raw.setdefault(key, ([], []))
            ends[0].append(r.bits[b.span[0]])
            ends[1].append(r.bits[b.span[1]])
    if len(rounds) != record.rounds or unused != record.unused or counts != record.group_counts or pair_rounds != record.pair_rounds:
        raise TranscriptCorruption(f"sifting of session {record.session_id} does not reproduce", index)
    digests = {key: raw_digest("".join(a), "".join(b)) for key, (a, b) in raw.items()}
    if digests != record.raw_digests:
        changed = sorted(k for k in set(digests) | set(record.raw_digests) if digests.get(k) != record.raw_digests.get(k))
        raise TranscriptCorruption(f"raw bits of {changed} in session {record.session_id} do not reproduce", index)


def _check_pair(index: int, record: PairAccounting, sift: Optional[SiftRecord]) -> None:
    problems = []
    if sift is not None and sift.pair_rounds.get(record.pair, 0) != record.rounds:
        problems.append("round count")
    if record.raw_bits != record.rounds:
        problems.append("raw = rounds")
    if record.disclosed and record.raw_bits != record.disclosed + record.reconciliation_input:
        problems.append("raw = disclosed + reconciliation input")
    if record.failure is None and record.amplification_input - record.compression != record.final_bits:
        problems.append("amplification input - compression = final")
    if record.failure is not None and record.key_digest is not None:
        problems.append("key digest without a key")
    if problems:
        raise TranscriptCorruption(f"pair {record.pair} accounting broken: {', '.join(problems)}", index)


def _check_refresh(index: int, record: RefreshAccounting, pairs: Dict[str, PairAccounting], header: SessionHeader) -> None:
    endpoint = "~".join(sorted((header.alice, header.bob)))
    if record.reserve_bits + record.secret_bits != record.endpoint_key_bits:
        raise TranscriptCorruption("endpoint reserve + secret output differs from its key length", index)
    for pair, growth in record.pool_growth.items():
        if pair == endpoint:
            if growth != record.reserve_bits:
                raise TranscriptCorruption(f"pool {pair} grew by {growth}, reserve was {record.reserve_bits}", index)
            continue
        accounting = next((p for name, p in pairs.items() if "~".join(sorted(name.split("~"))) == pair), None)
        if accounting is None or accounting.final_bits != growth:
            raise TranscriptCorruption(f"pool {pair} grew by {growth} bits without a matching pair key", index)


def replay_transcript(transcript: Union[Transcript, Sequence[BaseModel]], tag_bits: int = 64, tag_key_cost: int = 128) -> ReplayReport:
    records = transcript.records if isinstance(transcript, Transcript) else list(transcript)
    defaults = {"tag_bits": tag_bits, "tag_key_cost": tag_key_cost}
    report = ReplayReport(records=len(records))
    headers: Dict[str, SessionHeader] = {}
    rounds: Dict[str, List[QuantumRound]] = {}
    sifts: Dict[str, SiftRecord] = {}
    pairs: Dict[str, Dict[str, PairAccounting]] = {}
    finished = set()
    deliveries = DeliveryChecker()

    for index, record in enumerate(records):
        if deliveries.open is not None and not isinstance(record, EnvelopeHop):
            raise TranscriptMalformed(f"delivery of {deliveries.open.payload_type}#{deliveries.open.sequence} is cut off at record {index}")
        if isinstance(record, ScenarioHeader):
            defaults = {"tag_bits": record.tag_bits, "tag_key_cost": record.tag_key_cost}
            continue
        if isinstance(record, SessionHeader):
            if record.session_id in headers:
                raise TranscriptMalformed(f"session {record.session_id} opened twice at record {index}")
            headers[record.session_id] = record
            rounds[record.session_id] = []
            pairs[record.session_id] = {}
            continue
        session_id = record.session_id
        header = headers.get(session_id)
        # 路由控制面的记录不属于任何会话
        if header is None and not isinstance(record, (EnvelopeHop, TapRecord)):
            raise TranscriptMalformed(f"record {index} belongs to unopened session {session_id}")
        if session_id in finished:
            raise TranscriptMalformed(f"record {index} follows the outcome of session {session_id}")

        if isinstance(record, QuantumRound):
            history = rounds[session_id]
            _check_round(index, record, header, history[-1].digest if history else "")
            history.append(record)
            report.rounds_checked += 1
        elif isinstance(record, TapRecord):
            deliveries.tap(record)
        elif isinstance(record, EnvelopeHop):
            bits = header.tag_bits if header else defaults["tag_bits"]
            cost = header.tag_key_cost if header else defaults["tag_key_cost"]
            report.tags_checked += deliveries.hop(index, record, bits, cost)
        elif isinstance(record, SiftRecord):
            _check_sift(index, record, header, rounds[session_id])
            sifts[session_id] = record
        elif isinstance(record, PairAccounting):
            _check_pair(index, record, sifts.get(session_id))
            pairs[session_id][record.pair] = record
            report.pairs_checked += 1
        elif isinstance(record, RefreshAccounting):
            _check_refresh(index, record, pairs[session_id], header)
        elif isinstance(record, SessionOutcome):
            finished.add(session_id)

    if deliveries.open is not None:
        raise TranscriptMalformed(f"transcript ends inside the delivery of {deliveries.open.payload_type}#{deliveries.open.sequence}")
    unfinished = sorted(set(headers) - finished)
    if unfinished:
        raise TranscriptMalformed(f"transcript ends before the outcome of {unfinished}")
    report.sessions = len(headers)
    logger.info(f"Replayed {report.records} records: {report.tags_checked} tags, {report.pairs_checked} pairs")
    return report
