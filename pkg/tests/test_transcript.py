import numpy as np
import pytest

from app.core.errors import TranscriptCorruption, TranscriptMalformed
from app.core.netsim import run_scenario
from app.core.security import compute_tag
from app.core.transcript import Transcript, replay_transcript, round_digest, tag_from_record
from app.models.auth import ClassicalEnvelope, TagCoverage


@pytest.fixture
def transcript(make_scenario):
    _, transcript = run_scenario(make_scenario(relays=2, rounds=2000))
    return transcript


def first_index(transcript, predicate):
    return next(i for i, r in enumerate(transcript.records) if predicate(r))


def test_replay_of_a_clean_run(transcript):
    report = replay_transcript(transcript)
    assert report.sessions == 1
    assert report.rounds_checked == 2000
    assert report.tags_checked > 0
    assert report.pairs_checked == 6


def test_written_transcript_reads_back(transcript, tmp_path):
    path = tmp_path / "transcript.jsonl"
    transcript.write(path)
    loaded = Transcript.read(path)
    assert list(loaded.lines()) == list(transcript.lines())
    assert path.read_text(encoding="utf-8").count("\n") == len(transcript)
    assert replay_transcript(loaded).sessions == 1


@pytest.mark.parametrize("action", ["tagged", "verified", "delivered"])
def test_tampered_payload_is_pinpointed(transcript, action):
    def target(r):
        if r.kind != "hop" or r.action != action or r.payload_type != "ANNOUNCE":
            return False
        return action != "verified" or (r.ok and r.key_segment)

    index = first_index(transcript, target)
    record = transcript.records[index]
    altered = ("[" if record.payload[0] != "[" else "{") + record.payload[1:]
    transcript.records[index] = record.model_copy(update={"payload": altered})
    with pytest.raises(TranscriptCorruption) as info:
        replay_transcript(transcript)
    assert info.value.record_index == index


def test_flipped_round_bit_is_pinpointed(transcript):
    index = first_index(transcript, lambda r: r.kind == "round" and r.round_index == 23)
    record = transcript.records[index]
    bits = ("1" if record.bits[0] == "0" else "0") + record.bits[1:]
    transcript.records[index] = record.model_copy(update={"bits": bits})
    with pytest.raises(TranscriptCorruption) as info:
        replay_transcript(transcript)
    assert info.value.record_index == index


def test_rewritten_rounds_do_not_reproduce_the_raw_bits(transcript):
    # 改掉一个进入 alice~carol1 原始密钥的比特，并把后续摘要链整条重算
    index = first_index(transcript, lambda r: r.kind == "round" and r.bases[0] == r.bases[1] != r.bases[2])
    record = transcript.records[index]
    previous = next(
        (r.digest for r in reversed(transcript.records[:index]) if r.kind == "round" and r.session_id == record.session_id),
        "",
    )
    for i in range(index, len(transcript.records)):
        r = transcript.records[i]
        if r.kind != "round" or r.session_id != record.session_id:
            continue
        bits = r.bits
        if i == index:
            bits = ("1" if bits[0] == "0" else "0") + bits[1:]
        previous = round_digest(previous, r.round_index, r.bases, bits, r.intercepted, r.destination)
        transcript.records[i] = r.model_copy(update={"bits": bits, "digest": previous})
    sift_index = first_index(transcript, lambda r: r.kind == "sift")
    with pytest.raises(TranscriptCorruption) as info:
        replay_transcript(transcript)
    assert info.value.record_index == sift_index
    assert "alice~carol1" in info.value.detail


def test_delivery_without_verification_is_detected(transcript):
    index = first_index(transcript, lambda r: r.kind == "hop" and r.action == "delivered" and r.session_id != "control")
    assert transcript.records[index - 1].action == "verified"
    del transcript.records[index - 1]
    with pytest.raises(TranscriptCorruption) as info:
        replay_transcript(transcript)
    assert info.value.record_index == index - 1


@pytest.mark.parametrize("adversary", [
    {"model": "TAMPER", "link": ["carol", "bob"], "fraction": 1.0, "target_phase": "ANNOUNCE"},
    {"model": "TAMPER", "link": ["alice", "carol"], "fraction": 0.2},
    {"model": "PASSIVE_TAP", "link": ["alice", "carol"]},
    {"model": "INJECT", "link": ["carol", "bob"], "attempts": 50},
    {"model": "INJECT", "link": ["carol", "bob"], "attempts": 50, "replay": True},
    {"model": "EVE_INTERCEPT_RESEND", "link": ["alice", "carol"], "fraction": 0.5},
], ids=["tamper-announce", "tamper-some", "tap", "forge", "replay", "eve"])
def test_adversarial_runs_replay_cleanly(make_scenario, adversary):
    _, transcript = run_scenario(make_scenario(rounds=1000, adversaries=[adversary]))
    report = replay_transcript(transcript)
    assert report.sessions == 1
    assert report.tags_checked > 0


def test_altered_payload_needs_a_recorded_tamper(make_scenario):
    adversary = {"model": "TAMPER", "link": ["carol", "bob"], "fraction": 1.0, "target_phase": "ANNOUNCE"}
    _, transcript = run_scenario(make_scenario(rounds=1000, adversaries=[adversary]))
    index = first_index(transcript, lambda r: r.kind == "tap" and r.altered)
    del transcript.records[index]
    with pytest.raises(TranscriptCorruption) as info:
        replay_transcript(transcript)
    changed = transcript.records[info.value.record_index]
    assert (changed.kind, changed.node, changed.payload_type) == ("hop", "bob", "ANNOUNCE")


def test_reused_key_segment_is_detected(transcript):
    tagged = [i for i, r in enumerate(transcript.records) if r.kind == "hop" and r.action == "tagged"]
    first = transcript.records[tagged[0]]
    index = next(
        i for i in tagged[1:]
        if {transcript.records[i].author, transcript.records[i].verifier} == {first.author, first.verifier}
    )
    # 用第一条标签的密钥段给后面同一池上的消息重新签名
    record = transcript.records[index]
    envelope = ClassicalEnvelope(
        record.session_id, record.sequence, record.origin, record.destination, record.payload_type,
        record.payload.encode("latin-1"),
    )
    prior = tuple(tag_from_record(t) for t in record.prior_tags)
    key = np.unpackbits(np.frombuffer(bytes.fromhex(first.key_segment), dtype=np.uint8))
    tag = compute_tag(key, envelope.digest_input(TagCoverage(record.covers), prior), 64)
    transcript.records[index] = record.model_copy(update={
        "key_offset": first.key_offset, "key_segment": first.key_segment, "tag_bits": tag,
    })
    with pytest.raises(TranscriptCorruption) as info:
        replay_transcript(transcript)
    assert info.value.record_index == index
    assert "keys two tags" in info.value.detail


def test_altered_sifting_is_detected(transcript):
    index = first_index(transcript, lambda r: r.kind == "sift")
    record = transcript.records[index]
    transcript.records[index] = record.model_copy(update={"unused": record.unused + 1})
    with pytest.raises(TranscriptCorruption) as info:
        replay_transcript(transcript)
    assert info.value.record_index == index


def test_broken_accounting_is_detected(transcript):
    index = first_index(transcript, lambda r: r.kind == "pair")
    record = transcript.records[index]
    transcript.records[index] = record.model_copy(update={"final_bits": record.final_bits + 1})
    with pytest.raises(TranscriptCorruption):
        replay_transcript(transcript)


def test_truncated_transcript(transcript):
    truncated = Transcript(transcript.records[:-1])
    with pytest.raises(TranscriptMalformed):
        replay_transcript(truncated)


def test_garbage_lines_are_rejected():
    with pytest.raises(TranscriptMalformed):
        Transcript.parse(['{"kind": "scenario", "name": "x", "seed": 1, "tag_bits": 64, "tag_key_cost": 128}', "not json"])
    with pytest.raises(TranscriptMalformed):
        Transcript.parse(['{"kind": "mystery"}'])
    assert len(Transcript.parse(["", "   "])) == 0
