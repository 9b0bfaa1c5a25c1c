"""Bilaterally signed, hash-chained interaction log.

Every interaction between two agents becomes one fixed-shape record,
signed by both parties over the same canonical bytes and linked to its
predecessor by hash. Content enters only as 32-byte commitments, so the
log can be shared for audit without disclosing payloads. The audit walk
checks, per record and in this order: sequence continuity, predecessor
linkage, sender signature, receiver signature.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

from . import cborcanon, crypto
from .cborcanon import CBORDecodeError
from .certificates import Certificate, ReproLevel, certificate_hash
from .crypto import Digest, Signature, ZERO_DIGEST


class LedgerError(Exception):
    """Base class for ledger failures."""


class MalformedRecord(LedgerError):
    """Stored bytes do not decode to a well-formed record."""


class SigningFailure(LedgerError):
    """A party's key could not produce a signature."""


class StorageFailure(LedgerError):
    """The record could not be persisted."""


class MissingDisclosure(LedgerError):
    """Reconstruction needs a disclosed payload that was not supplied."""


class Marker(str, Enum):
    PARTIAL_VERIFIABILITY = "PARTIAL_VERIFIABILITY"


class AuditFailure(str, Enum):
    SIG_SENDER = "SIG_SENDER"
    SIG_RECEIVER = "SIG_RECEIVER"
    CHAIN_BREAK = "CHAIN_BREAK"
    SEQ_GAP = "SEQ_GAP"


_MAX_SEED = 2**64


@dataclass(frozen=True)
class ReproAnchor:
    """Replay parameters frozen at interaction time.

    `skills_hash` is the manifest hash of the sending agent's certificate
    when the record was written, so a later replay runs against the tool
    set that was actually live.
    """

    seed: int
    model_ver: str
    skills_hash: Digest

    def __post_init__(self) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ValueError("anchor seed must be an integer")
        if not 0 <= self.seed < _MAX_SEED:
            raise ValueError("anchor seed out of range")
        object.__setattr__(self, "skills_hash", Digest(self.skills_hash))


def _coerce_markers(markers: Iterable[Union[Marker, str]]) -> frozenset:
    return frozenset(Marker(m) for m in markers)


@dataclass(frozen=True)
class RecordDraft:
    """Caller-supplied record fields.

    Sequence number and predecessor hash are assigned by the ledger at
    append time, never by the caller.
    """

    timestamp: int
    sender_id: str
    receiver_id: str
    sender_cert_hash: Digest
    receiver_cert_hash: Digest
    input_commitment: Digest
    output_commitment: Digest
    anchor: ReproAnchor
    markers: frozenset = frozenset()

    def __post_init__(self) -> None:
        if self.timestamp < 0:
            raise ValueError("timestamp must be non-negative")
        for name in (
            "sender_cert_hash",
            "receiver_cert_hash",
            "input_commitment",
            "output_commitment",
        ):
            object.__setattr__(self, name, Digest(getattr(self, name)))
        object.__setattr__(self, "markers", _coerce_markers(self.markers))


@dataclass(frozen=True)
class InteractionRecord:
    seq: int
    timestamp: int
    sender_id: str
    receiver_id: str
    sender_cert_hash: Digest
    receiver_cert_hash: Digest
    input_commitment: Digest
    output_commitment: Digest
    anchor: ReproAnchor
    prev_hash: Digest
    sender_sig: Signature
    receiver_sig: Signature
    markers: frozenset = frozenset()

    def __post_init__(self) -> None:
        if self.seq < 1:
            raise ValueError("seq starts at 1")
        if self.timestamp < 0:
            raise ValueError("timestamp must be non-negative")
        for name in (
            "sender_cert_hash",
            "receiver_cert_hash",
            "input_commitment",
            "output_commitment",
            "prev_hash",
        ):
            object.__setattr__(self, name, Digest(getattr(self, name)))
        object.__setattr__(self, "sender_sig", Signature(self.sender_sig))
        object.__setattr__(self, "receiver_sig", Signature(self.receiver_sig))
        object.__setattr__(self, "markers", _coerce_markers(self.markers))


# Wire layout: one top-level array, body fields first, signatures last.
# Both signatures cover the body prefix; the record hash covers the whole
# array, signatures included, so a re-signed record still breaks its
# successor's linkage.

_BODY_FIELDS = 11
_RECORD_FIELDS = _BODY_FIELDS + 2


def _body_items(
    seq: int,
    draftlike,
    prev_hash: Digest,
) -> list:
    return [
        seq,
        draftlike.timestamp,
        draftlike.sender_id,
        draftlike.receiver_id,
        bytes(draftlike.sender_cert_hash),
        bytes(draftlike.receiver_cert_hash),
        bytes(draftlike.input_commitment),
        bytes(draftlike.output_commitment),
        [
            draftlike.anchor.seed,
            draftlike.anchor.model_ver,
            bytes(draftlike.anchor.skills_hash),
        ],
        bytes(prev_hash),
        sorted(m.value for m in draftlike.markers),
    ]


def canonical_record_body(record: InteractionRecord) -> bytes:
    """The byte string both parties sign: all fields except the signatures."""
    return cborcanon.encode(_body_items(record.seq, record, record.prev_hash))


def encode_record(record: InteractionRecord) -> bytes:
    items = _body_items(record.seq, record, record.prev_hash)
    items.append(bytes(record.sender_sig))
    items.append(bytes(record.receiver_sig))
    return cborcanon.encode(items)


def record_hash(record: InteractionRecord) -> Digest:
    return crypto.digest(encode_record(record))


def decode_record(data: bytes) -> InteractionRecord:
    """Strict inverse of encode_record; rejects any non-canonical bytes."""
    try:
        obj = cborcanon.decode(data)
    except CBORDecodeError as exc:
        raise MalformedRecord(str(exc)) from exc
    if not isinstance(obj, list) or len(obj) != _RECORD_FIELDS:
        raise MalformedRecord("record must be a 13-element array")
    (
        seq,
        timestamp,
        sender_id,
        receiver_id,
        ch_send,
        ch_recv,
        c_in,
        c_out,
        anchor_items,
        prev_hash,
        markers,
        sig_send,
        sig_recv,
    ) = obj
    if not isinstance(anchor_items, list) or len(anchor_items) != 3:
        raise MalformedRecord("anchor must be a 3-element array")
    if not isinstance(markers, list):
        raise MalformedRecord("markers must be an array")
    try:
        record = InteractionRecord(
            seq=seq,
            timestamp=timestamp,
            sender_id=sender_id,
            receiver_id=receiver_id,
            sender_cert_hash=ch_send,
            receiver_cert_hash=ch_recv,
            input_commitment=c_in,
            output_commitment=c_out,
            anchor=ReproAnchor(anchor_items[0], anchor_items[1], anchor_items[2]),
            prev_hash=prev_hash,
            sender_sig=sig_send,
            receiver_sig=sig_recv,
            markers=markers,
        )
    except (TypeError, ValueError) as exc:
        raise MalformedRecord(str(exc)) from exc
    if encode_record(record) != bytes(data):
        raise MalformedRecord("record bytes are not in canonical form")
    return record


def keys_path(path: Union[str, Path]) -> Path:
    """Sidecar location for the id-to-verification-key table."""
    return Path(str(path) + ".keys.json")


def save_keys(keys: Mapping[str, bytes], path: Union[str, Path]) -> None:
    payload = {aid: bytes(pk).hex() for aid, pk in sorted(keys.items())}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_keys(path: Union[str, Path]) -> dict:
    payload = json.loads(Path(path).read_text())
    return {aid: bytes.fromhex(pk) for aid, pk in payload.items()}


class Ledger:
    """Append-only record store, optionally backed by an on-disk log.

    One writer at a time. With a path, each append is written out before
    control returns; `durable=True` additionally fsyncs, `durable=False`
    leaves flushing to the OS (benchmark mode). `path=None` keeps the
    whole log in memory.
    """

    def __init__(
        self, path: Optional[Union[str, Path]] = None, *, durable: bool = True
    ) -> None:
        self.path = Path(path) if path is not None else None
        self.durable = durable
        self.records: list = []
        self.keys: dict = {}
        self.head_hash: Digest = ZERO_DIGEST
        self._fh = None
        if self.path is not None:
            if self.path.exists():
                self._load(self.path.read_bytes())
            sidecar = keys_path(self.path)
            if sidecar.exists():
                self.keys.update(load_keys(sidecar))
            self._fh = open(self.path, "ab")

    def _load(self, data: bytes) -> None:
        for frame in cborcanon.iter_length_prefixed(data):
            record = decode_record(frame)
            self.records.append(record)
            self.head_hash = crypto.digest(frame)

    @property
    def head_seq(self) -> int:
        return len(self.records)

    def append(
        self,
        draft: RecordDraft,
        sender_key: crypto.KeyPair,
        receiver_key: crypto.KeyPair,
    ) -> InteractionRecord:
        """Bilaterally sign `draft`, link it to the head, persist, return it."""
        for aid, pair in (
            (draft.sender_id, sender_key),
            (draft.receiver_id, receiver_key),
        ):
            known = self.keys.get(aid)
            if known is not None and known != pair.public_key:
                raise LedgerError(f"verification key change for {aid!r}")
        seq = self.head_seq + 1
        body = cborcanon.encode(_body_items(seq, draft, self.head_hash))
        try:
            sender_sig = crypto.sign(sender_key.secret_key, body)
            receiver_sig = crypto.sign(receiver_key.secret_key, body)
        except (ValueError, crypto.CryptoError) as exc:
            raise SigningFailure(str(exc)) from exc
        record = InteractionRecord(
            seq=seq,
            timestamp=draft.timestamp,
            sender_id=draft.sender_id,
            receiver_id=draft.receiver_id,
            sender_cert_hash=draft.sender_cert_hash,
            receiver_cert_hash=draft.receiver_cert_hash,
            input_commitment=draft.input_commitment,
            output_commitment=draft.output_commitment,
            anchor=draft.anchor,
            prev_hash=self.head_hash,
            sender_sig=sender_sig,
            receiver_sig=receiver_sig,
            markers=draft.markers,
        )
        frame = encode_record(record)
        if self._fh is not None:
            try:
                self._fh.write(cborcanon.length_prefixed(frame))
                self._fh.flush()
                if self.durable:
                    os.fsync(self._fh.fileno())
            except OSError as exc:
                raise StorageFailure(str(exc)) from exc
        new_ids = {draft.sender_id: sender_key.public_key}
        new_ids[draft.receiver_id] = receiver_key.public_key
        grew = any(aid not in self.keys for aid in new_ids)
        self.keys.update(new_ids)
        if grew and self.path is not None:
            try:
                save_keys(self.keys, keys_path(self.path))
            except OSError as exc:
                raise StorageFailure(str(exc)) from exc
        self.records.append(record)
        self.head_hash = crypto.digest(frame)
        return record

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "Ledger":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


@dataclass(frozen=True)
class AuditReport:
    ok: bool
    first_bad_seq: Optional[int] = None
    failure: Optional[AuditFailure] = None

    def __post_init__(self) -> None:
        if self.ok != (self.first_bad_seq is None) or self.ok != (
            self.failure is None
        ):
            raise ValueError("ok reports carry no failure, failed reports must")


@dataclass(frozen=True)
class AuditCheckpoint:
    """Resume point for an audit over a trusted clean prefix."""

    byte_offset: int
    next_seq: int
    prev_hash: Digest


def _check_record(
    record: InteractionRecord,
    expected_seq: int,
    prev_hash: Digest,
    keys: Mapping[str, bytes],
) -> Optional[AuditFailure]:
    if record.seq != expected_seq:
        return AuditFailure.SEQ_GAP
    if record.prev_hash != prev_hash:
        return AuditFailure.CHAIN_BREAK
    body = canonical_record_body(record)
    pk = keys.get(record.sender_id)
    if pk is None or not crypto.verify_signature(pk, body, record.sender_sig):
        return AuditFailure.SIG_SENDER
    pk = keys.get(record.receiver_id)
    if pk is None or not crypto.verify_signature(pk, body, record.receiver_sig):
        return AuditFailure.SIG_RECEIVER
    return None


def _audit_records(
    records: Sequence[InteractionRecord],
    keys: Mapping[str, bytes],
    *,
    start_seq: int = 1,
    prev_hash: Digest = ZERO_DIGEST,
) -> AuditReport:
    expected = start_seq
    prev = prev_hash
    for record in records:
        failure = _check_record(record, expected, prev, keys)
        if failure is not None:
            return AuditReport(False, expected, failure)
        prev = record_hash(record)
        expected += 1
    return AuditReport(True)


def audit(ledger: Ledger) -> AuditReport:
    """Full forward walk over the in-memory records."""
    return _audit_records(ledger.records, ledger.keys)


def audit_bytes(
    data: bytes,
    keys: Mapping[str, bytes],
    *,
    checkpoint: Optional[AuditCheckpoint] = None,
) -> AuditReport:
    """Audit a serialized log, optionally resuming from a clean prefix.

    Any framing or decode damage is reported as CHAIN_BREAK at the
    position where the walk loses the thread.
    """
    pos, expected, prev = 0, 1, ZERO_DIGEST
    if checkpoint is not None:
        pos, expected, prev = (
            checkpoint.byte_offset,
            checkpoint.next_seq,
            checkpoint.prev_hash,
        )
    total = len(data)
    while pos < total:
        if pos + 4 > total:
            return AuditReport(False, expected, AuditFailure.CHAIN_BREAK)
        length = int.from_bytes(data[pos : pos + 4], "little")
        end = pos + 4 + length
        if end > total:
            return AuditReport(False, expected, AuditFailure.CHAIN_BREAK)
        frame = bytes(data[pos + 4 : end])
        try:
            record = decode_record(frame)
        except MalformedRecord:
            return AuditReport(False, expected, AuditFailure.CHAIN_BREAK)
        failure = _check_record(record, expected, prev, keys)
        if failure is not None:
            return AuditReport(False, expected, failure)
        # decode_record guarantees frame == encode_record(record)
        prev = crypto.digest(frame)
        expected += 1
        pos = end
    return AuditReport(True)


def audit_file(
    path: Union[str, Path],
    *,
    keys: Optional[Mapping[str, bytes]] = None,
    checkpoint: Optional[AuditCheckpoint] = None,
) -> AuditReport:
    if keys is None:
        keys = load_keys(keys_path(path))
    return audit_bytes(Path(path).read_bytes(), keys, checkpoint=checkpoint)


@dataclass(frozen=True)
class FrameSpan:
    offset: int  # position of the 4-byte length prefix
    end: int  # one past the frame's last byte
    seq: int


def scan_frames(data: bytes) -> list:
    """Frame layout of a well-formed serialized log."""
    spans = []
    pos = 0
    for frame in cborcanon.iter_length_prefixed(data):
        end = pos + 4 + len(frame)
        spans.append(FrameSpan(pos, end, decode_record(frame).seq))
        pos = end
    return spans


def audit_checkpoints(data: bytes) -> list:
    """Per-frame resume points, index-aligned with scan_frames(data).

    Checkpoint i trusts everything before frame i and re-audits from
    there, which makes localized damage cheap to confirm.
    """
    checkpoints = []
    prev = ZERO_DIGEST
    pos = 0
    seq = 1
    for frame in cborcanon.iter_length_prefixed(data):
        checkpoints.append(AuditCheckpoint(pos, seq, prev))
        prev = crypto.digest(frame)
        pos += 4 + len(frame)
        seq += 1
    return checkpoints


def chain_auditability_depth(path, ledger) -> int:
    """First hop of `path` with no matching log entry; len(path) if none missing.

    `path` lists directed (sender_id, receiver_id) hops. Hop j is matched
    by any record with that sender and receiver.
    """
    records = getattr(ledger, "records", ledger)
    recorded = {(r.sender_id, r.receiver_id) for r in records}
    for j, edge in enumerate(path, start=1):
        if tuple(edge) not in recorded:
            return j
    return len(path)


def record_to_json_dict(record: InteractionRecord) -> dict:
    return {
        "seq": record.seq,
        "timestamp": record.timestamp,
        "sender_id": record.sender_id,
        "receiver_id": record.receiver_id,
        "sender_cert_hash": record.sender_cert_hash.hex(),
        "receiver_cert_hash": record.receiver_cert_hash.hex(),
        "input_commitment": record.input_commitment.hex(),
        "output_commitment": record.output_commitment.hex(),
        "anchor": {
            "seed": record.anchor.seed,
            "model_ver": record.anchor.model_ver,
            "skills_hash": record.anchor.skills_hash.hex(),
        },
        "prev_hash": record.prev_hash.hex(),
        "sender_sig": record.sender_sig.hex(),
        "receiver_sig": record.receiver_sig.hex(),
        "markers": sorted(m.value for m in record.markers),
    }


def export_jsonl(ledger: Ledger, path: Union[str, Path]) -> int:
    """Write one JSON object per record; returns the record count."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in ledger.records:
            fh.write(json.dumps(record_to_json_dict(record), sort_keys=True))
            fh.write("\n")
    return len(ledger.records)


@dataclass(frozen=True)
class StepResult:
    passed: bool
    first_bad_seq: Optional[int] = None
    note: str = ""


@dataclass(frozen=True)
class ReconstructionReport:
    """Outcome of the five reconstruction steps over one interaction path."""

    selected_seqs: tuple
    selection: StepResult
    integrity: StepResult
    commitments: StepResult
    certificates: StepResult
    replay: StepResult

    @property
    def ok(self) -> bool:
        return all(
            step.passed
            for step in (
                self.selection,
                self.integrity,
                self.commitments,
                self.certificates,
                self.replay,
            )
        )


def forensic_reconstruct(
    ledger: Ledger,
    path: Sequence,
    disclosures: Mapping[int, tuple],
    certs_at_time: Callable[[str, int], Optional[Certificate]],
    replay_fn: Callable,
) -> ReconstructionReport:
    """Re-derive what happened along `path` from the log plus disclosures.

    Steps, in order: (1) select the earliest record for each hop; (2)
    audit the contiguous span those records sit in; (3) check each
    disclosed payload pair against the stored commitments; (4) check the
    stored certificate hashes against the certificates valid at each
    record's timestamp; (5) replay every record whose sender committed to
    reproducibility, via `replay_fn(cert, input, output, anchor)`.

    Raises MissingDisclosure when step 3 has no payloads for a selected
    record; every other failure lands in the report.
    """
    selected = []
    missing_hop = None
    for j, (sender, receiver) in enumerate(path, start=1):
        match = next(
            (
                r
                for r in ledger.records
                if r.sender_id == sender and r.receiver_id == receiver
            ),
            None,
        )
        if match is None:
            if missing_hop is None:
                missing_hop = j
        else:
            selected.append(match)
    selected.sort(key=lambda r: r.seq)
    selection = StepResult(
        missing_hop is None,
        note="" if missing_hop is None else f"no record for hop {missing_hop}",
    )

    if selected:
        lo, hi = selected[0].seq, selected[-1].seq
        span = ledger.records[lo - 1 : hi]
        prev = (
            record_hash(ledger.records[lo - 2]) if lo > 1 else ZERO_DIGEST
        )
        span_report = _audit_records(
            span, ledger.keys, start_seq=lo, prev_hash=prev
        )
        integrity = StepResult(
            span_report.ok,
            span_report.first_bad_seq,
            span_report.failure.value if span_report.failure else "",
        )
    else:
        integrity = StepResult(True, note="empty span")

    commitments = StepResult(True)
    for record in selected:
        if record.seq not in disclosures:
            raise MissingDisclosure(f"no disclosed payloads for seq {record.seq}")
        input_bytes, output_bytes = disclosures[record.seq]
        if (
            crypto.digest(input_bytes) != record.input_commitment
            or crypto.digest(output_bytes) != record.output_commitment
        ):
            commitments = StepResult(False, record.seq)
            break

    certificates = StepResult(True)
    for record in selected:
        ok = True
        for aid, expected in (
            (record.sender_id, record.sender_cert_hash),
            (record.receiver_id, record.receiver_cert_hash),
        ):
            cert = certs_at_time(aid, record.timestamp)
            if cert is None or certificate_hash(cert) != expected:
                ok = False
                break
        if not ok:
            certificates = StepResult(False, record.seq)
            break

    replay = StepResult(True)
    replayed = 0
    for record in selected:
        cert = certs_at_time(record.sender_id, record.timestamp)
        if cert is None or cert.repro.level is ReproLevel.NONE:
            continue
        input_bytes, output_bytes = disclosures[record.seq]
        outcome = replay_fn(cert, input_bytes, output_bytes, record.anchor)
        replayed += 1
        if not bool(getattr(outcome, "passed", outcome)):
            replay = StepResult(False, record.seq)
            break
    if replay.passed:
        replay = StepResult(True, note=f"replayed {replayed} records")

    return ReconstructionReport(
        selected_seqs=tuple(r.seq for r in selected),
        selection=selection,
        integrity=integrity,
        commitments=commitments,
        certificates=certificates,
        replay=replay,
    )
