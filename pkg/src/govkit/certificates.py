"""Capability-bound certificates for agent trust trees.

A certificate binds an agent identity to its verification key, its model
binding (provider/id/version), a hash of its tool manifest, trust
constraints that must narrow monotonically along every delegation edge,
a reproducibility commitment that gates replay verification, and a
governance level. Issuance enforces the narrowing rules; the wire format
is the deterministic CBOR subset with a PEM-like text envelope for files.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from fractions import Fraction
from typing import Dict, Mapping, Optional, Tuple

from . import cborcanon
from .crypto import (
    PUBLIC_KEY_SIZE,
    Digest,
    Signature,
    digest,
    sign,
)


class CertificateError(Exception):
    """Base class for certificate failures."""


class MalformedCertificate(CertificateError):
    """Wire bytes do not decode to a valid certificate."""


class DuplicateSkillError(CertificateError):
    """Two manifest entries share (sid, ver) but disagree elsewhere."""


class IssuanceError(CertificateError):
    """Issuance precondition violated; `code` names the rule."""

    code = "ISSUANCE_FAILED"


class TypeConstraintError(IssuanceError):
    code = "TYPE_CONSTRAINT"


class ConstraintViolationError(IssuanceError):
    code = "CONSTRAINT_VIOLATION"


class DepthExhaustedError(IssuanceError):
    code = "DEPTH_EXHAUSTED"


class ExpiredIssuerError(IssuanceError):
    code = "EXPIRED_ISSUER"


class Tier(IntEnum):
    """Data sensitivity tiers. Lower value = more sensitive.

    A certificate's max_tier is the most sensitive tier its holder may
    touch, so T0 is the broadest grant and T3 the narrowest.
    """

    T0 = 0
    T1 = 1
    T2 = 2
    T3 = 3

    def covers(self, credential_tier: "Tier") -> bool:
        """May a holder capped at `self` touch data of `credential_tier`?"""
        return credential_tier.value >= self.value


class NodeType(str, Enum):
    """NA: non-agentic principal (person, org, service). AG: autonomous agent."""

    NA = "NA"
    AG = "AG"


class GovernanceLevel(str, Enum):
    L1_POSTHOC = "L1_posthoc"
    L2_SAMPLED = "L2_sampled"
    L3_COMPILETIME = "L3_compiletime"


class ReproLevel(str, Enum):
    FULL = "full"
    STATISTICAL = "statistical"
    NONE = "none"


@dataclass(frozen=True)
class ReproCommitment:
    """Declared determinism class plus replay configuration.

    Statistical commitments must carry a "theta" config entry parsing to
    a rational in (0, 1]; that value is the replay acceptance threshold.
    """

    level: ReproLevel
    config: Tuple[Tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "level", ReproLevel(self.level))
        if isinstance(self.config, Mapping):
            pairs = tuple(sorted(self.config.items()))
        else:
            pairs = tuple(sorted(tuple(p) for p in self.config))
        for key, value in pairs:
            if not isinstance(key, str) or not isinstance(value, str):
                raise CertificateError("repro config entries must be strings")
        object.__setattr__(self, "config", pairs)
        if self.level is ReproLevel.STATISTICAL:
            theta = self.theta()
            if theta is None:
                raise CertificateError(
                    "statistical commitment requires a theta config entry"
                )
            if not (0 < theta <= 1):
                raise CertificateError(f"theta {theta} outside (0, 1]")

    def config_map(self) -> Dict[str, str]:
        return dict(self.config)

    def theta(self) -> Optional[Fraction]:
        """Replay threshold from config, None if absent or unparseable."""
        raw = self.config_map().get("theta")
        if raw is None:
            return None
        try:
            return Fraction(raw)
        except (ValueError, ZeroDivisionError):
            return None


@dataclass(frozen=True)
class SkillEntry:
    """One tool grant: identifier, version, code/descriptor hash, scopes."""

    sid: str
    ver: str
    h: Digest
    scopes: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.sid:
            raise CertificateError("skill sid must be non-empty")
        object.__setattr__(self, "h", Digest(self.h))
        normalized = tuple(sorted(set(self.scopes)))
        for scope in normalized:
            if not isinstance(scope, str):
                raise CertificateError("scopes must be strings")
        object.__setattr__(self, "scopes", normalized)


@dataclass(frozen=True)
class SkillsManifest:
    """Normalized set of skill entries, sorted by (sid, ver).

    Identical duplicate entries collapse; two entries agreeing on
    (sid, ver) but differing elsewhere are rejected, since the pair is
    the entry's identity.
    """

    entries: Tuple[SkillEntry, ...] = ()

    def __post_init__(self) -> None:
        deduped = sorted(set(self.entries), key=lambda e: (e.sid, e.ver))
        for prev, cur in zip(deduped, deduped[1:]):
            if (prev.sid, prev.ver) == (cur.sid, cur.ver):
                raise DuplicateSkillError(
                    f"conflicting entries for ({cur.sid!r}, {cur.ver!r})"
                )
        object.__setattr__(self, "entries", tuple(deduped))

    def with_entry(self, entry: SkillEntry) -> "SkillsManifest":
        return SkillsManifest(self.entries + (entry,))

    def without(self, sid: str) -> "SkillsManifest":
        return SkillsManifest(tuple(e for e in self.entries if e.sid != sid))


@dataclass(frozen=True)
class ModelBinding:
    """Provider, model id, and model version an agent is pinned to."""

    provider: str
    model_id: str
    model_ver: str

    def __post_init__(self) -> None:
        for name in ("provider", "model_id", "model_ver"):
            if not getattr(self, name):
                raise CertificateError(f"model binding field {name} must be non-empty")


@dataclass(frozen=True)
class TrustConstraints:
    """Delegation limits: tier ceiling, remaining depth, model set, rate."""

    max_tier: Tier
    max_depth: int
    allowed_models: frozenset = frozenset()
    max_rate: Fraction = Fraction(0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "max_tier", Tier(self.max_tier))
        if self.max_depth < 0:
            raise CertificateError("max_depth must be non-negative")
        object.__setattr__(self, "allowed_models", frozenset(self.allowed_models))
        rate = self.max_rate
        if not isinstance(rate, Fraction):
            rate = Fraction(rate)
        if rate < 0:
            raise CertificateError("max_rate must be non-negative")
        object.__setattr__(self, "max_rate", rate)


def constraint_leq(a: TrustConstraints, b: TrustConstraints) -> bool:
    """Is `a` at most as permissive as `b` in every dimension?

    Tier may not become more sensitive, depth must strictly decrease,
    models must be a subset, rate may not grow. Rates compare exactly as
    rationals. Strict depth makes the order irreflexive by design: a
    child always has strictly less delegation room than its parent.
    """
    return (
        a.max_tier.value >= b.max_tier.value
        and a.max_depth < b.max_depth
        and a.allowed_models <= b.allowed_models
        and a.max_rate <= b.max_rate
    )


@dataclass(frozen=True)
class Certificate:
    id: str
    parent_id: str
    public_key: bytes
    model: ModelBinding
    manifest_hash: Digest
    constraints: TrustConstraints
    repro: ReproCommitment
    governance_level: GovernanceLevel
    node_type: NodeType
    not_before: int
    not_after: int
    issuer_signature: Signature = field(repr=False)

    def __post_init__(self) -> None:
        if not self.id:
            raise CertificateError("certificate id must be non-empty")
        if len(self.public_key) != PUBLIC_KEY_SIZE:
            raise CertificateError("public key must be 32 bytes")
        object.__setattr__(self, "public_key", bytes(self.public_key))
        object.__setattr__(self, "manifest_hash", Digest(self.manifest_hash))
        object.__setattr__(self, "governance_level", GovernanceLevel(self.governance_level))
        object.__setattr__(self, "node_type", NodeType(self.node_type))
        object.__setattr__(self, "issuer_signature", Signature(self.issuer_signature))
        if self.not_before >= self.not_after:
            raise CertificateError("not_before must precede not_after")
        if (
            self.governance_level is GovernanceLevel.L3_COMPILETIME
            and self.repro.level is not ReproLevel.FULL
        ):
            raise CertificateError(
                "compile-time governance requires a full repro commitment"
            )

    @property
    def is_root(self) -> bool:
        return self.parent_id == self.id

    def valid_at(self, now: int) -> bool:
        return self.not_before <= now < self.not_after


# ---------------------------------------------------------------------------
# Canonical encoding
# ---------------------------------------------------------------------------


def canonical_encode(manifest: SkillsManifest) -> bytes:
    """Deterministic bytes for a manifest: entries as [sid, ver, h, scopes]."""
    value = [
        [entry.sid, entry.ver, bytes(entry.h), list(entry.scopes)]
        for entry in manifest.entries
    ]
    return cborcanon.encode(value)


def manifest_hash(manifest: SkillsManifest) -> Digest:
    """Hash of the canonical manifest encoding; input-order invariant."""
    return digest(canonical_encode(manifest))


def _constraints_value(constraints: TrustConstraints) -> list:
    return [
        constraints.max_tier.value,
        constraints.max_depth,
        sorted(constraints.allowed_models),
        [constraints.max_rate.numerator, constraints.max_rate.denominator],
    ]


def _repro_value(repro: ReproCommitment) -> list:
    return [repro.level.value, repro.config_map()]


def _body_value(cert: Certificate) -> list:
    return [
        cert.id,
        cert.parent_id,
        cert.public_key,
        [cert.model.provider, cert.model.model_id, cert.model.model_ver],
        bytes(cert.manifest_hash),
        _constraints_value(cert.constraints),
        _repro_value(cert.repro),
        cert.governance_level.value,
        cert.node_type.value,
        cert.not_before,
        cert.not_after,
    ]


def canonical_body(cert: Certificate) -> bytes:
    """The signed portion: every field except the issuer signature."""
    return cborcanon.encode(_body_value(cert))


def encode_certificate(cert: Certificate) -> bytes:
    """Full wire bytes: the body fields plus the issuer signature."""
    return cborcanon.encode(_body_value(cert) + [bytes(cert.issuer_signature)])


def certificate_hash(cert: Certificate) -> Digest:
    """Hash of the full encoded certificate, signature included."""
    return digest(encode_certificate(cert))


def _cert_from_value(value: object) -> Certificate:
    if not isinstance(value, list) or len(value) != 12:
        raise MalformedCertificate("certificate must be a 12-field array")
    (
        cert_id,
        parent_id,
        public_key,
        model_value,
        mhash,
        constraints_value,
        repro_value,
        governance,
        node_type,
        not_before,
        not_after,
        signature,
    ) = value
    try:
        if not isinstance(model_value, list) or len(model_value) != 3:
            raise MalformedCertificate("model binding must be a 3-field array")
        model = ModelBinding(*model_value)
        if not isinstance(constraints_value, list) or len(constraints_value) != 4:
            raise MalformedCertificate("constraints must be a 4-field array")
        tier_value, max_depth, allowed, rate_pair = constraints_value
        if not isinstance(rate_pair, list) or len(rate_pair) != 2:
            raise MalformedCertificate("rate must be a numerator/denominator pair")
        constraints = TrustConstraints(
            max_tier=Tier(tier_value),
            max_depth=max_depth,
            allowed_models=frozenset(allowed),
            max_rate=Fraction(rate_pair[0], rate_pair[1]),
        )
        if not isinstance(repro_value, list) or len(repro_value) != 2:
            raise MalformedCertificate("repro commitment must be a 2-field array")
        repro = ReproCommitment(
            level=ReproLevel(repro_value[0]),
            config=tuple(sorted(repro_value[1].items())),
        )
        return Certificate(
            id=cert_id,
            parent_id=parent_id,
            public_key=public_key,
            model=model,
            manifest_hash=Digest(mhash),
            constraints=constraints,
            repro=repro,
            governance_level=GovernanceLevel(governance),
            node_type=NodeType(node_type),
            not_before=not_before,
            not_after=not_after,
            issuer_signature=Signature(signature),
        )
    except MalformedCertificate:
        raise
    except (CertificateError, ValueError, TypeError, AttributeError, ZeroDivisionError) as exc:
        raise MalformedCertificate(f"invalid certificate field: {exc}") from exc


def decode_certificate(data: bytes) -> Certificate:
    """Strict inverse of encode_certificate; rejects non-canonical bytes."""
    try:
        value = cborcanon.decode(data)
    except cborcanon.CBORDecodeError as exc:
        raise MalformedCertificate(f"bad CBOR: {exc}") from exc
    cert = _cert_from_value(value)
    if encode_certificate(cert) != bytes(data):
        raise MalformedCertificate("non-canonical certificate encoding")
    return cert


_PEM_HEADER = "-----BEGIN AGENT CERT-----"
_PEM_FOOTER = "-----END AGENT CERT-----"


def encode_certificate_pem(cert: Certificate) -> str:
    """Text envelope for files: base64 of the wire bytes, 64-column wrapped."""
    payload = base64.b64encode(encode_certificate(cert)).decode("ascii")
    lines = [payload[i : i + 64] for i in range(0, len(payload), 64)]
    return "\n".join([_PEM_HEADER, *lines, _PEM_FOOTER]) + "\n"


def decode_certificate_pem(text: str) -> Certificate:
    lines = [line.strip() for line in text.strip().splitlines() if line.strip()]
    if len(lines) < 2 or lines[0] != _PEM_HEADER or lines[-1] != _PEM_FOOTER:
        raise MalformedCertificate("missing certificate envelope markers")
    try:
        data = base64.b64decode("".join(lines[1:-1]), validate=True)
    except (ValueError, TypeError) as exc:
        raise MalformedCertificate("invalid base64 payload") from exc
    return decode_certificate(data)


# ---------------------------------------------------------------------------
# Issuance
# ---------------------------------------------------------------------------


def issue_certificate(
    issuer: Optional[Certificate],
    issuer_secret_key: bytes,
    *,
    subject_id: str,
    public_key: bytes,
    model: ModelBinding,
    manifest: SkillsManifest,
    constraints: TrustConstraints,
    repro: ReproCommitment,
    governance_level: GovernanceLevel,
    node_type: NodeType,
    not_before: int,
    not_after: int,
    now: Optional[int] = None,
) -> Certificate:
    """Create and sign a certificate for `subject_id`.

    With `issuer=None` this creates a self-signed root: parent_id is the
    subject's own id and no narrowing check applies (a root has no parent
    edge). For every real edge the rules are: an unexpired issuer, agents
    only delegate to agents, a positive remaining depth, and constraints
    that narrow per constraint_leq.

    Args:
        issuer: issuing certificate, or None for a self-signed root.
        issuer_secret_key: signing seed matching the issuer (or the new
            root's own key when issuer is None).
        now: issuance-time clock for the expiry check; defaults to the
            subject's not_before.

    Returns:
        The signed certificate.
    """
    if issuer is None:
        parent_id = subject_id
    else:
        check_at = now if now is not None else not_before
        if not issuer.valid_at(check_at):
            raise ExpiredIssuerError(
                f"issuer {issuer.id!r} not valid at {check_at}"
            )
        if issuer.node_type is NodeType.AG and NodeType(node_type) is not NodeType.AG:
            raise TypeConstraintError(
                "agents cannot confer trust on non-agent principals"
            )
        if issuer.constraints.max_depth == 0:
            raise DepthExhaustedError(
                f"issuer {issuer.id!r} has no delegation depth remaining"
            )
        if not constraint_leq(constraints, issuer.constraints):
            raise ConstraintViolationError(
                "subject constraints do not narrow the issuer's"
            )
        parent_id = issuer.id

    unsigned = Certificate(
        id=subject_id,
        parent_id=parent_id,
        public_key=public_key,
        model=model,
        manifest_hash=manifest_hash(manifest),
        constraints=constraints,
        repro=repro,
        governance_level=governance_level,
        node_type=node_type,
        not_before=not_before,
        not_after=not_after,
        issuer_signature=Signature(b"\x00" * 64),
    )
    signature = sign(issuer_secret_key, canonical_body(unsigned))
    return Certificate(
        id=unsigned.id,
        parent_id=unsigned.parent_id,
        public_key=unsigned.public_key,
        model=unsigned.model,
        manifest_hash=unsigned.manifest_hash,
        constraints=unsigned.constraints,
        repro=unsigned.repro,
        governance_level=unsigned.governance_level,
        node_type=unsigned.node_type,
        not_before=unsigned.not_before,
        not_after=unsigned.not_after,
        issuer_signature=signature,
    )


def make_root_certificate(
    root_id: str,
    keypair,
    *,
    model: ModelBinding,
    constraints: TrustConstraints,
    repro: Optional[ReproCommitment] = None,
    governance_level: GovernanceLevel = GovernanceLevel.L1_POSTHOC,
    not_before: int,
    not_after: int,
) -> Certificate:
    """Self-signed NA trust anchor; parent_id is the root's own id."""
    return issue_certificate(
        None,
        keypair.secret_key,
        subject_id=root_id,
        public_key=keypair.public_key,
        model=model,
        manifest=SkillsManifest(),
        constraints=constraints,
        repro=repro if repro is not None else ReproCommitment(ReproLevel.NONE),
        governance_level=governance_level,
        node_type=NodeType.NA,
        not_before=not_before,
        not_after=not_after,
    )


def certificate_to_json_dict(cert: Certificate) -> dict:
    """JSON-friendly view with hex digests; used by the CLI."""
    return {
        "id": cert.id,
        "parent_id": cert.parent_id,
        "public_key": cert.public_key.hex(),
        "model": {
            "provider": cert.model.provider,
            "model_id": cert.model.model_id,
            "model_ver": cert.model.model_ver,
        },
        "manifest_hash": cert.manifest_hash.hex(),
        "constraints": {
            "max_tier": cert.constraints.max_tier.name,
            "max_depth": cert.constraints.max_depth,
            "allowed_models": sorted(cert.constraints.allowed_models),
            "max_rate": str(cert.constraints.max_rate),
        },
        "repro": {
            "level": cert.repro.level.value,
            "config": cert.repro.config_map(),
        },
        "governance_level": cert.governance_level.value,
        "node_type": cert.node_type.value,
        "not_before": cert.not_before,
        "not_after": cert.not_after,
        "issuer_signature": cert.issuer_signature.hex(),
    }
