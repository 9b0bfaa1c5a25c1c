"""Operator command surface: files in, JSON out.

Subcommands cover key generation, certificate issuance and inspection,
chain verification, ledger append/audit/export plus a tamper
demonstration, replay verification, divergence budgets, threshold
calibration, verifiability depth, and the pipeline simulator.

Exit codes follow one contract everywhere: 0 for success, 1 when a
governance check denies or a detection fires, 2 for usage or I/O
problems. Stdout is a single JSON document exactly when --json is
passed; diagnostics go to stderr. Time-sensitive commands accept
--now <epoch-ms> so fixtures replay byte-identically.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from filelock import FileLock

from . import cborcanon, crypto
from .certificates import (
    Certificate,
    CertificateError,
    GovernanceLevel,
    IssuanceError,
    ModelBinding,
    NodeType,
    ReproCommitment,
    ReproLevel,
    SkillEntry,
    SkillsManifest,
    Tier,
    TrustConstraints,
    certificate_hash,
    certificate_to_json_dict,
    decode_certificate_pem,
    encode_certificate_pem,
    issue_certificate,
    manifest_hash,
)
from .harness import ENTRY_COUNTS, normalize_scenario_id, simulate
from .ledger import (
    Ledger,
    LedgerError,
    Marker,
    RecordDraft,
    ReproAnchor,
    audit_bytes,
    chain_auditability_depth,
    decode_record,
    export_jsonl,
    load_keys,
    keys_path,
    record_hash,
    scan_frames,
)
from .repro import (
    InputCommitmentMismatch,
    ReplayStatus,
    SeededTextExecutor,
    chain_verifiability_depth,
    epsilon_bound,
    replay_verify,
    required_budget,
)
from .similarity import calibrate_thresholds, similarity_scores
from .verifier import Credential, RevocationRegistry, verify_access

_DAY_MS = 86_400_000
_DEFAULT_VALIDITY_MS = 365 * _DAY_MS

_GOVERNANCE_CHOICES = {
    "L1": GovernanceLevel.L1_POSTHOC,
    "L2": GovernanceLevel.L2_SAMPLED,
    "L3": GovernanceLevel.L3_COMPILETIME,
}


@dataclass(frozen=True)
class CommandResult:
    """What a dispatch produced: the process exit code and, when the
    command got far enough to build one, its structured payload."""

    exit_code: int
    json: Optional[dict] = None


class _CliError(Exception):
    """Input problem detected past argument parsing; maps to exit 2."""

    exit_code = 2


def govkit_home() -> Path:
    """Base directory for default key and ledger paths."""
    return Path(os.environ.get("GOVKIT_HOME", str(Path.home() / ".govkit")))


def _default_ledger() -> Path:
    return govkit_home() / "ledger.bin"


def _ledger_lock(path: Path) -> FileLock:
    # One writer or auditor at a time per ledger file.
    return FileLock(str(path) + ".lock")


def _now_ms(args: argparse.Namespace) -> int:
    if getattr(args, "now", None) is not None:
        return args.now
    return int(time.time() * 1000)


def _jsonsafe(value):
    """Replace non-finite floats so stdout stays strictly valid JSON."""
    if isinstance(value, float):
        if value != value:
            return "nan"
        if value in (float("inf"), float("-inf")):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, dict):
        return {k: _jsonsafe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonsafe(v) for v in value]
    return value


# ---------------------------------------------------------------------------
# File loaders
# ---------------------------------------------------------------------------


def _read_bytes(path: str) -> bytes:
    return Path(path).read_bytes()


def _load_keypair(path: str) -> crypto.KeyPair:
    payload = json.loads(Path(path).read_text())
    try:
        return crypto.KeyPair(
            public_key=bytes.fromhex(payload["public_key"]),
            secret_key=bytes.fromhex(payload["secret_key"]),
        )
    except (KeyError, TypeError) as exc:
        raise _CliError(f"{path}: not a key file ({exc})") from exc


def _load_certificate(path: str) -> Certificate:
    return decode_certificate_pem(Path(path).read_text())


def _load_manifest(path: Optional[str]) -> SkillsManifest:
    if path is None:
        return SkillsManifest()
    payload = json.loads(Path(path).read_text())
    if not isinstance(payload, dict) or not isinstance(
        payload.get("entries", []), list
    ):
        raise _CliError(f"{path}: expected an object with an 'entries' list")
    entries = []
    for i, raw in enumerate(payload.get("entries", [])):
        if not isinstance(raw, dict):
            raise _CliError(f"{path}: entry {i} is not an object")
        try:
            sid, ver = raw["sid"], raw["ver"]
        except KeyError as exc:
            raise _CliError(f"{path}: entry {i} missing field {exc}") from exc
        if ("h" in raw) == ("descriptor" in raw):
            raise _CliError(
                f"{path}: entry {i} needs exactly one of 'h' (hex digest) "
                "or 'descriptor' (string to hash)"
            )
        if "h" in raw:
            h = crypto.Digest(bytes.fromhex(raw["h"]))
        else:
            h = crypto.digest(str(raw["descriptor"]).encode())
        entries.append(
            SkillEntry(sid, ver, h, tuple(raw.get("scopes", ())))
        )
    return SkillsManifest(tuple(entries))


def _load_ledger_records(path: Path) -> list:
    if not path.exists():
        raise _CliError(f"{path}: no such ledger")
    return [
        decode_record(frame)
        for frame in cborcanon.iter_length_prefixed(path.read_bytes())
    ]


# ---------------------------------------------------------------------------
# Commands. Each returns (payload, human lines, exit code).
# ---------------------------------------------------------------------------

_CmdReturn = Tuple[dict, List[str], int]


def _cmd_keygen(args: argparse.Namespace) -> _CmdReturn:
    seed = bytes.fromhex(args.seed_hex) if args.seed_hex else None
    pair = crypto.generate_keypair(seed)
    out = (
        Path(args.out)
        if args.out
        else govkit_home() / "keys" / f"{args.id}.json"
    )
    if out.exists() and not args.force:
        raise _CliError(f"{out}: exists; pass --force to overwrite")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(
        json.dumps(
            {
                "id": args.id,
                "public_key": pair.public_key.hex(),
                "secret_key": pair.secret_key.hex(),
            },
            indent=2,
        )
        + "\n"
    )
    payload = {
        "id": args.id,
        "public_key": pair.public_key.hex(),
        "path": str(out),
    }
    return payload, [f"{args.id}: {pair.public_key.hex()} -> {out}"], 0


def _parse_model(value: str) -> ModelBinding:
    parts = value.split(":")
    if len(parts) != 3 or not all(parts):
        raise _CliError(
            f"model binding {value!r} must be provider:model_id:model_ver"
        )
    return ModelBinding(*parts)


def _parse_repro(args: argparse.Namespace) -> ReproCommitment:
    config = {}
    for item in args.repro_config or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise _CliError(f"--repro-config {item!r} must be KEY=VALUE")
        config[key] = value
    if args.theta is not None:
        config["theta"] = args.theta
    return ReproCommitment(ReproLevel(args.repro), config)


def _cmd_cert_issue(args: argparse.Namespace) -> _CmdReturn:
    now = _now_ms(args)
    issuer = _load_certificate(args.issuer) if args.issuer else None
    issuer_key = _load_keypair(args.issuer_key)
    if args.subject_key:
        public_key = _load_keypair(args.subject_key).public_key
    elif args.subject_pub:
        public_key = bytes.fromhex(args.subject_pub)
    else:
        raise _CliError("provide --subject-key or --subject-pub")
    not_before = args.not_before if args.not_before is not None else now
    not_after = (
        args.not_after
        if args.not_after is not None
        else not_before + _DEFAULT_VALIDITY_MS
    )
    node_type = NodeType(
        args.node_type
        if args.node_type
        else (NodeType.AG if issuer is not None else NodeType.NA)
    )
    constraints = TrustConstraints(
        max_tier=Tier[args.tier],
        max_depth=args.depth,
        allowed_models=frozenset(args.allowed_model or ()),
        max_rate=args.rate,
    )
    try:
        cert = issue_certificate(
            issuer,
            issuer_key.secret_key,
            subject_id=args.subject_id,
            public_key=public_key,
            model=_parse_model(args.model),
            manifest=_load_manifest(args.manifest),
            constraints=constraints,
            repro=_parse_repro(args),
            governance_level=_GOVERNANCE_CHOICES[args.governance],
            node_type=node_type,
            not_before=not_before,
            not_after=not_after,
            now=now,
        )
    except IssuanceError as exc:
        # Refused by delegation rules, not by bad input: a governance
        # outcome, reported like any other denial.
        payload = {
            "issued": False,
            "kind": type(exc).__name__,
            "error": str(exc),
        }
        return payload, [f"refused ({type(exc).__name__}): {exc}"], 1
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(encode_certificate_pem(cert))
    payload = {
        "issued": True,
        "path": str(out),
        "certificate": certificate_to_json_dict(cert),
    }
    return payload, [f"issued {cert.id} -> {out}"], 0


def _cmd_cert_inspect(args: argparse.Namespace) -> _CmdReturn:
    cert = _load_certificate(args.certificate)
    payload = certificate_to_json_dict(cert)
    c = cert.constraints
    lines = [
        f"id:          {cert.id} ({cert.node_type.value})",
        f"parent:      {cert.parent_id}",
        f"model:       {cert.model.provider}:{cert.model.model_id}"
        f":{cert.model.model_ver}",
        f"constraints: tier<={c.max_tier.name} depth={c.max_depth}"
        f" models={sorted(c.allowed_models) or '[]'} rate={c.max_rate}",
        f"repro:       {cert.repro.level.value}"
        + (f" theta={cert.repro.theta()}" if cert.repro.theta() else ""),
        f"governance:  {cert.governance_level.value}",
        f"validity:    [{cert.not_before}, {cert.not_after})",
        f"manifest:    {cert.manifest_hash.hex()}",
    ]
    return payload, lines, 0


def _cmd_cert_manifest_hash(args: argparse.Namespace) -> _CmdReturn:
    digest = manifest_hash(_load_manifest(args.manifest))
    return {"manifest_hash": digest.hex()}, [digest.hex()], 0


def _cmd_cert_revoke(args: argparse.Namespace) -> _CmdReturn:
    at = args.at if args.at is not None else _now_ms(args)
    registry_path = Path(args.registry)
    registry_path.parent.mkdir(parents=True, exist_ok=True)
    with FileLock(str(registry_path) + ".lock"):
        if registry_path.exists():
            registry = RevocationRegistry.load(registry_path)
        else:
            registry = RevocationRegistry()
        registry.revoke(args.cert_id, at)
        registry.save(registry_path)
    payload = {"revoked": args.cert_id, "at": at, "registry": str(registry_path)}
    return payload, [f"revoked {args.cert_id} at {at}"], 0


def _cmd_verify(args: argparse.Namespace) -> _CmdReturn:
    chain = [_load_certificate(p) for p in args.chain]
    roots = [_load_certificate(p) for p in args.root]
    if args.revocations:
        revocations = RevocationRegistry.load(args.revocations)
    else:
        revocations = RevocationRegistry()
    decision = verify_access(
        chain,
        Credential(args.credential_id, Tier[args.credential_tier]),
        _load_manifest(args.manifest),
        roots,
        revocations,
        _now_ms(args),
    )
    payload = decision.as_dict()
    if decision.allowed:
        lines = ["ALLOW"]
    else:
        lines = [f"DENY (phase {decision.phase}): {decision.reason.value}"]
    return payload, lines, 0 if decision.allowed else 1


def _cmd_ledger_append(args: argparse.Namespace) -> _CmdReturn:
    path = Path(args.ledger)
    sender_cert = _load_certificate(args.sender_cert)
    receiver_cert = _load_certificate(args.receiver_cert)
    sender_key = _load_keypair(args.sender_key)
    receiver_key = _load_keypair(args.receiver_key)
    input_bytes = _read_bytes(args.input)
    output_bytes = _read_bytes(args.output)
    draft = RecordDraft(
        timestamp=_now_ms(args),
        sender_id=sender_cert.id,
        receiver_id=receiver_cert.id,
        sender_cert_hash=certificate_hash(sender_cert),
        receiver_cert_hash=certificate_hash(receiver_cert),
        input_commitment=crypto.digest(input_bytes),
        output_commitment=crypto.digest(output_bytes),
        anchor=ReproAnchor(
            seed=args.seed,
            model_ver=sender_cert.model.model_ver,
            skills_hash=sender_cert.manifest_hash,
        ),
        markers=frozenset(Marker(m) for m in args.marker or ()),
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    with _ledger_lock(path):
        with Ledger(path) as ledger:
            record = ledger.append(draft, sender_key, receiver_key)
    payload = {
        "ledger": str(path),
        "seq": record.seq,
        "record_hash": record_hash(record).hex(),
    }
    return payload, [f"seq {record.seq} -> {path}"], 0


def _cmd_ledger_audit(args: argparse.Namespace) -> _CmdReturn:
    path = Path(args.ledger)
    if not path.exists():
        raise _CliError(f"{path}: no such ledger")
    with _ledger_lock(path):
        data = path.read_bytes()
        keys = load_keys(keys_path(path))
    report = audit_bytes(data, keys)
    payload = {
        "ledger": str(path),
        "ok": report.ok,
        "first_bad_seq": report.first_bad_seq,
        "failure": report.failure.value if report.failure else None,
    }
    if report.ok:
        lines = ["ok"]
    else:
        lines = [f"FAILED at seq {report.first_bad_seq}: {report.failure.value}"]
    return payload, lines, 0 if report.ok else 1


def _cmd_ledger_export(args: argparse.Namespace) -> _CmdReturn:
    path = Path(args.ledger)
    if not path.exists():
        raise _CliError(f"{path}: no such ledger")
    with _ledger_lock(path):
        with Ledger(path) as ledger:
            count = export_jsonl(ledger, args.out)
    payload = {"ledger": str(path), "out": args.out, "records": count}
    return payload, [f"{count} records -> {args.out}"], 0


def _cmd_ledger_tamper_demo(args: argparse.Namespace) -> _CmdReturn:
    """Flip one byte of an in-memory copy and show the audit catching it.

    The file on disk is never modified.
    """
    path = Path(args.ledger)
    if not path.exists():
        raise _CliError(f"{path}: no such ledger")
    with _ledger_lock(path):
        data = bytearray(path.read_bytes())
        keys = load_keys(keys_path(path))
    spans = scan_frames(bytes(data))
    if not spans:
        raise _CliError(f"{path}: ledger is empty")
    seq = args.seq if args.seq is not None else (len(spans) + 1) // 2
    matches = [s for s in spans if s.seq == seq]
    if not matches:
        raise _CliError(f"{path}: no record with seq {seq}")
    span = matches[0]
    body_size = span.end - span.offset - 4
    offset = args.byte_offset
    if not 0 <= offset < body_size:
        raise _CliError(
            f"--byte-offset {offset} outside the record's {body_size} bytes"
        )
    position = span.offset + 4 + offset
    data[position] ^= 0xFF
    report = audit_bytes(bytes(data), keys)
    payload = {
        "ledger": str(path),
        "seq": seq,
        "byte_offset": offset,
        "detected": not report.ok,
        "first_bad_seq": report.first_bad_seq,
        "failure": report.failure.value if report.failure else None,
    }
    if report.ok:
        # A missed mutation would break the tamper-evidence guarantee.
        print("warning: mutation went undetected", file=sys.stderr)
        return payload, ["mutation NOT detected"], 0
    lines = [
        f"flipped byte {offset} of seq {seq};"
        f" audit: {report.failure.value} at seq {report.first_bad_seq}"
    ]
    return payload, lines, 1


def _cmd_replay_verify(args: argparse.Namespace) -> _CmdReturn:
    cert = _load_certificate(args.cert)
    records = _load_ledger_records(Path(args.ledger))
    matches = [r for r in records if r.seq == args.seq]
    if not matches:
        raise _CliError(f"{args.ledger}: no record with seq {args.seq}")
    record = matches[0]
    disclosed_input = _read_bytes(args.input)
    original_output = Path(args.output).read_text()
    executor = SeededTextExecutor(cert.model.model_id, cert.model.model_ver)
    try:
        outcome = replay_verify(
            cert, record, original_output, disclosed_input, executor
        )
    except InputCommitmentMismatch as exc:
        payload = {
            "seq": args.seq,
            "verdict": None,
            "detected": True,
            "error": str(exc),
        }
        return payload, [f"tampered disclosure: {exc}"], 1
    violation = outcome.verdict is ReplayStatus.VIOLATION
    payload = {
        "seq": args.seq,
        "verdict": outcome.verdict.value,
        "detected": violation,
        "metrics": (
            outcome.report.metric_values() if outcome.report else None
        ),
    }
    return payload, [outcome.verdict.value], 1 if violation else 0


def _cmd_budget(args: argparse.Namespace) -> _CmdReturn:
    if args.n is not None:
        epsilon = epsilon_bound(args.n, args.alpha)
        payload = {"n": args.n, "alpha": args.alpha, "epsilon": epsilon}
        lines = [f"n={args.n} alpha={args.alpha} epsilon={epsilon:.6f}"]
    else:
        n = required_budget(args.epsilon, args.alpha)
        payload = {
            "epsilon": args.epsilon,
            "alpha": args.alpha,
            "n": n,
            "achieved_epsilon": epsilon_bound(n, args.alpha),
        }
        lines = [f"epsilon<={args.epsilon} alpha={args.alpha} needs n={n}"]
    return payload, lines, 0


def _cmd_calibrate(args: argparse.Namespace) -> _CmdReturn:
    pairs = []
    with open(args.pairs, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            try:
                scores = similarity_scores(entry["text_a"], entry["text_b"])
                pairs.append((scores, entry["label"]))
            except KeyError as exc:
                raise _CliError(
                    f"{args.pairs}:{lineno}: missing field {exc}"
                ) from exc
    report = calibrate_thresholds(pairs)
    payload = report.as_json_dict()
    lines = [f"pairs: {report.n_same} same_model, {report.n_cross} cross_model"]
    for name, cal in sorted(report.metrics.items()):
        lines.append(
            f"{name}: threshold={cal.threshold:.4f} J={cal.youden_j:.3f}"
            f" d={cal.cohens_d:.2f} q={cal.cross_model_pass_rate:.3f}"
        )
    return payload, lines, 0


def _cmd_cvd(args: argparse.Namespace) -> _CmdReturn:
    chain = [_load_certificate(p) for p in args.chain]
    depth = chain_verifiability_depth(chain)
    n = len(chain) - 1
    payload = {
        "chain_length": n,
        "cvd": depth,
        "cad": None,
        "effective_depth": depth,
    }
    if args.ledger:
        records = _load_ledger_records(Path(args.ledger))
        path = [(chain[j].id, chain[j + 1].id) for j in range(n)]
        cad = chain_auditability_depth(path, records)
        payload["cad"] = cad
        payload["effective_depth"] = min(depth, cad)
    effective = payload["effective_depth"]
    if effective < n:
        lines = [f"PARTIAL: effective depth {effective} of {n}"]
        return payload, lines, 1
    return payload, [f"full verifiability at depth {n}"], 0


def _cmd_simulate(args: argparse.Namespace) -> _CmdReturn:
    attack = normalize_scenario_id(args.attack) if args.attack else None
    payload = simulate(
        agent_count=args.agents,
        attack=attack,
        seed=args.seed,
        mock_latency_s=args.latency,
    )
    if args.report:
        out = Path(args.report)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(payload, indent=2) + "\n")
    lines = [
        f"agents={payload['agents']} seed={payload['seed']}"
        f" calls={payload['calls']} entries={payload['entries']}",
        f"audit_ok={payload['audit_ok']}"
        f" replays={payload['replays']['passed']}/"
        f"{payload['replays']['passed'] + payload['replays']['failed']}"
        f" marked={payload['marked_records']}",
    ]
    if payload["attack"]:
        a = payload["attack"]
        verdict = "MATCH" if a["matched"] else "MISMATCH"
        lines.append(
            f"attack {a['scenario']}: {a['layer']}/{a['reason']} [{verdict}]"
        )
    for d in payload["detections"]:
        lines.append(f"detection: {d['layer']}/{d['reason']}")
    detected = bool(payload["detections"])
    return payload, lines, 1 if detected else 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    output = argparse.ArgumentParser(add_help=False)
    output.add_argument(
        "--json",
        action="store_true",
        help="print the structured payload as JSON on stdout",
    )
    clock = argparse.ArgumentParser(add_help=False)
    clock.add_argument(
        "--now",
        type=int,
        metavar="EPOCH_MS",
        help="decision-time clock in ms since the Unix epoch"
        " (default: system clock)",
    )

    parser = argparse.ArgumentParser(
        prog="govkit",
        description="Certificate, ledger, and replay tooling for governed"
        " multi-agent pipelines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", parents=[output], help="generate a signing keypair")
    p.add_argument("--id", required=True, help="principal name for the key file")
    p.add_argument("--seed-hex", help="32-byte hex seed for deterministic keys")
    p.add_argument("--out", help="key file path (default: GOVKIT_HOME/keys/ID.json)")
    p.add_argument("--force", action="store_true", help="overwrite an existing file")
    p.set_defaults(func=_cmd_keygen)

    cert = sub.add_parser("cert", help="certificate operations")
    cert_sub = cert.add_subparsers(dest="cert_command", required=True)

    p = cert_sub.add_parser(
        "issue", parents=[output, clock], help="issue a certificate"
    )
    p.add_argument("--issuer", help="issuer certificate (omit for a self-signed root)")
    p.add_argument("--issuer-key", required=True, help="issuer key file")
    p.add_argument("--subject-id", required=True)
    p.add_argument("--subject-key", help="subject key file (public half used)")
    p.add_argument("--subject-pub", help="subject public key as hex")
    p.add_argument(
        "--model", required=True, metavar="PROVIDER:MODEL_ID:MODEL_VER"
    )
    p.add_argument("--manifest", help="tool manifest JSON (default: empty)")
    p.add_argument("--tier", required=True, choices=[t.name for t in Tier])
    p.add_argument("--depth", required=True, type=int, help="delegation depth budget")
    p.add_argument(
        "--allowed-model",
        action="append",
        help="model id delegatees may bind (repeatable)",
    )
    p.add_argument("--rate", type=Fraction, default=Fraction(0))
    p.add_argument(
        "--repro",
        choices=[level.value for level in ReproLevel],
        default=ReproLevel.NONE.value,
        help="reproducibility commitment class",
    )
    p.add_argument("--theta", help="statistical replay threshold, e.g. 0.85")
    p.add_argument(
        "--repro-config",
        action="append",
        metavar="KEY=VALUE",
        help="extra replay config entries (repeatable)",
    )
    p.add_argument(
        "--governance", choices=sorted(_GOVERNANCE_CHOICES), default="L1"
    )
    p.add_argument("--node-type", choices=[t.value for t in NodeType])
    p.add_argument("--not-before", type=int, metavar="EPOCH_MS")
    p.add_argument("--not-after", type=int, metavar="EPOCH_MS")
    p.add_argument("--out", required=True, help="certificate output path")
    p.set_defaults(func=_cmd_cert_issue)

    p = cert_sub.add_parser(
        "inspect", parents=[output], help="decode a certificate file"
    )
    p.add_argument("certificate")
    p.set_defaults(func=_cmd_cert_inspect)

    p = cert_sub.add_parser(
        "manifest-hash",
        parents=[output],
        help="canonical hash of a tool manifest",
    )
    p.add_argument("manifest")
    p.set_defaults(func=_cmd_cert_manifest_hash)

    p = cert_sub.add_parser(
        "revoke", parents=[output, clock], help="add a certificate to a revocation list"
    )
    p.add_argument("--registry", required=True, help="revocation list path (JSONL)")
    p.add_argument("--cert-id", required=True)
    p.add_argument("--at", type=int, metavar="EPOCH_MS", help="revocation time (default: --now)")
    p.set_defaults(func=_cmd_cert_revoke)

    p = sub.add_parser(
        "verify",
        parents=[output, clock],
        help="run the four-phase access decision on a delegation chain",
    )
    p.add_argument("--chain", required=True, nargs="+", metavar="CERT")
    p.add_argument("--manifest", required=True, help="runtime tool manifest JSON")
    p.add_argument(
        "--credential-tier", required=True, choices=[t.name for t in Tier]
    )
    p.add_argument("--credential-id", default="cli-credential")
    p.add_argument(
        "--root",
        required=True,
        action="append",
        help="trusted root certificate (repeatable)",
    )
    p.add_argument("--revocations", help="revocation list JSONL")
    p.set_defaults(func=_cmd_verify)

    ledger = sub.add_parser("ledger", help="interaction ledger operations")
    ledger_sub = ledger.add_subparsers(dest="ledger_command", required=True)

    p = ledger_sub.add_parser(
        "append", parents=[output, clock], help="append a bilaterally signed record"
    )
    p.add_argument("--ledger", default=str(_default_ledger()))
    p.add_argument("--sender-cert", required=True)
    p.add_argument("--receiver-cert", required=True)
    p.add_argument("--sender-key", required=True)
    p.add_argument("--receiver-key", required=True)
    p.add_argument("--input", required=True, help="input disclosure file")
    p.add_argument("--output", required=True, help="output disclosure file")
    p.add_argument("--seed", required=True, type=int, help="execution seed")
    p.add_argument(
        "--marker",
        action="append",
        choices=[m.value for m in Marker],
        help="verifiability marker (repeatable)",
    )
    p.set_defaults(func=_cmd_ledger_append)

    p = ledger_sub.add_parser(
        "audit", parents=[output], help="walk the hash chain and both signatures"
    )
    p.add_argument("--ledger", default=str(_default_ledger()))
    p.set_defaults(func=_cmd_ledger_audit)

    p = ledger_sub.add_parser(
        "export", parents=[output], help="write the ledger as JSONL"
    )
    p.add_argument("--ledger", default=str(_default_ledger()))
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ledger_export)

    p = ledger_sub.add_parser(
        "tamper-demo",
        parents=[output],
        help="flip one byte of a copy and show the audit catching it",
    )
    p.add_argument("--ledger", default=str(_default_ledger()))
    p.add_argument("--seq", type=int, help="record to mutate (default: middle)")
    p.add_argument(
        "--byte-offset",
        type=int,
        default=0,
        help="byte position within the record frame",
    )
    p.set_defaults(func=_cmd_ledger_tamper_demo)

    p = sub.add_parser(
        "replay-verify",
        parents=[output],
        help="re-run a recorded computation and compare outputs",
    )
    p.add_argument("--cert", required=True, help="sender certificate")
    p.add_argument("--ledger", default=str(_default_ledger()))
    p.add_argument("--seq", required=True, type=int)
    p.add_argument("--input", required=True, help="disclosed input file")
    p.add_argument("--output", required=True, help="original output file")
    p.set_defaults(func=_cmd_replay_verify)

    p = sub.add_parser(
        "budget",
        parents=[output],
        help="divergence bound for n trials, or trials needed for a bound",
    )
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--n", type=int, help="replay trial count")
    group.add_argument("--epsilon", type=float, help="target divergence bound")
    p.add_argument("--alpha", type=float, default=0.01, help="significance level")
    p.set_defaults(func=_cmd_budget)

    p = sub.add_parser(
        "calibrate",
        parents=[output],
        help="pick similarity thresholds from labeled text pairs",
    )
    p.add_argument(
        "--pairs",
        required=True,
        help="JSONL of {text_a, text_b, label} with labels"
        " same_model / cross_model",
    )
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser(
        "cvd",
        parents=[output],
        help="verifiability depth of a delegation chain",
    )
    p.add_argument("--chain", required=True, nargs="+", metavar="CERT")
    p.add_argument("--ledger", help="also compute hop coverage from this ledger")
    p.set_defaults(func=_cmd_cvd)

    p = sub.add_parser(
        "simulate",
        parents=[output],
        help="run the governed pipeline, optionally with an injected attack",
    )
    p.add_argument(
        "--agents", type=int, default=5, choices=sorted(ENTRY_COUNTS)
    )
    p.add_argument("--attack", help="scenario id, e.g. S1 or E2E-4")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--latency", type=float, default=0.0, help="mock model latency in seconds"
    )
    p.add_argument("--report", help="also write the JSON payload to this file")
    p.set_defaults(func=_cmd_simulate)

    return parser


def dispatch(argv: Optional[Sequence[str]] = None) -> CommandResult:
    """Parse, route, execute, print. Total over bad input: every failure
    becomes an exit code, never a traceback."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse handles usage errors (2) and --help (0) itself.
        code = exc.code if isinstance(exc.code, int) else 2
        return CommandResult(code)
    try:
        payload, lines, exit_code = args.func(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CommandResult(exc.exit_code)
    except (
        OSError,
        ValueError,
        KeyError,
        LedgerError,
        CertificateError,
        crypto.CryptoError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CommandResult(2)
    if args.json:
        print(json.dumps(_jsonsafe(payload), indent=2, allow_nan=False))
    else:
        for line in lines:
            print(line)
    return CommandResult(exit_code, payload)


def main(argv: Optional[Sequence[str]] = None) -> int:
    return dispatch(argv).exit_code


if __name__ == "__main__":
    sys.exit(main())
