"""Four-phase access verification over certificate chains.

Phase 1 checks chain integrity: a trusted anchor, every link signed by
its predecessor, agent-only delegation below agents, monotone constraint
narrowing, and validity windows containing the decision time. Phase 2
binds the caller's live tool manifest to the hash in its leaf
certificate. Phase 3 compares the credential's sensitivity tier against
the leaf's effective ceiling (downgraded one tier when the leaf made no
reproducibility commitment). Phase 4 consults the revocation registry.
The first failing phase names the decision reason; decisions are values,
never exceptions.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .certificates import (
    Certificate,
    NodeType,
    ReproLevel,
    SkillsManifest,
    Tier,
    canonical_body,
    constraint_leq,
    encode_certificate,
    manifest_hash,
)
from .crypto import digest, verify_signature


class Verdict(str, Enum):
    ALLOW = "ALLOW"
    DENY = "DENY"


class Reason(str, Enum):
    OK = "OK"
    UNTRUSTED_ROOT = "UNTRUSTED_ROOT"
    BAD_SIGNATURE = "BAD_SIGNATURE"
    CONSTRAINT_VIOLATION = "CONSTRAINT_VIOLATION"
    MANIFEST_MISMATCH = "MANIFEST_MISMATCH"
    TIER_EXCEEDED = "TIER_EXCEEDED"
    REVOKED = "REVOKED"
    EXPIRED = "EXPIRED"
    TYPE_CONSTRAINT = "TYPE_CONSTRAINT"
    DEPTH_EXHAUSTED = "DEPTH_EXHAUSTED"


@dataclass(frozen=True)
class AccessDecision:
    verdict: Verdict
    reason: Reason
    phase: Optional[int] = None

    def __post_init__(self) -> None:
        if (self.verdict is Verdict.ALLOW) != (self.reason is Reason.OK):
            raise ValueError("ALLOW if and only if reason is OK")

    @classmethod
    def allow(cls) -> "AccessDecision":
        return cls(Verdict.ALLOW, Reason.OK, None)

    @classmethod
    def deny(cls, reason: Reason, phase: int) -> "AccessDecision":
        return cls(Verdict.DENY, reason, phase)

    @property
    def allowed(self) -> bool:
        return self.verdict is Verdict.ALLOW

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "reason": self.reason.value,
            "phase": self.phase,
        }


@dataclass(frozen=True)
class Credential:
    """A protected resource reference with a fixed sensitivity tier."""

    id: str
    tier: Tier
    secret_reference: str = ""


class RevocationRegistry:
    """Cert-id -> revocation time map. Append-only within a process;
    concurrent readers may observe a slightly stale view (CRL semantics).
    Persists as JSON lines, one {"id", "at"} object per line."""

    def __init__(self, revoked: Optional[Mapping[str, int]] = None) -> None:
        self._revoked: Dict[str, int] = dict(revoked or {})
        self._lock = threading.Lock()

    def revoke(self, cert_id: str, at: int) -> None:
        with self._lock:
            # Keep the earliest revocation time if revoked twice.
            current = self._revoked.get(cert_id)
            self._revoked[cert_id] = at if current is None else min(current, at)

    def is_revoked(self, cert_id: str, now: int) -> bool:
        at = self._revoked.get(cert_id)
        return at is not None and at <= now

    def __len__(self) -> int:
        return len(self._revoked)

    def as_dict(self) -> Dict[str, int]:
        return dict(self._revoked)

    def save(self, path: Union[str, Path]) -> None:
        with self._lock:
            lines = [
                json.dumps({"id": cert_id, "at": at}, sort_keys=True)
                for cert_id, at in sorted(self._revoked.items())
            ]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RevocationRegistry":
        registry = cls()
        text = Path(path).read_text()
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            registry.revoke(entry["id"], entry["at"])
        return registry


def revoke(registry: RevocationRegistry, cert_id: str, at: int) -> RevocationRegistry:
    """Record a revocation; later verifications at time >= `at` deny."""
    registry.revoke(cert_id, at)
    return registry


def effective_tier(cert: Certificate) -> Tier:
    """The tier ceiling actually granted at decision time.

    An agent that declines any reproducibility commitment is downgraded
    one tier toward least privilege, saturating at T3.
    """
    tier = cert.constraints.max_tier
    if cert.repro.level is ReproLevel.NONE:
        return Tier(min(tier.value + 1, Tier.T3.value))
    return tier


_RootsInput = Union[Iterable[Certificate], Mapping[str, Certificate]]


def _root_map(roots: _RootsInput) -> Dict[str, Certificate]:
    if isinstance(roots, Mapping):
        return dict(roots)
    return {cert.id: cert for cert in roots}


class VerifiedChainCache:
    """Memo for the signature/structure checks of phase 1.

    Keyed by the exact certificate bytes of the chain plus the trusted
    root set, so any alteration of any certificate is a different key.
    Time-dependent checks (validity windows, revocation) and the
    per-call phases (manifest, tier) are never cached.
    """

    def __init__(self) -> None:
        self._entries: Dict[bytes, Optional[Tuple[Reason, int]]] = {}
        self.hits = 0
        self.misses = 0

    def _key(self, chain: Sequence[Certificate], roots: Mapping[str, Certificate]) -> bytes:
        root_ids = sorted(
            (cert.id, cert.public_key.hex()) for cert in roots.values()
        )
        material = [encode_certificate(cert) for cert in chain]
        material.append(repr(root_ids).encode())
        return bytes(digest(b"\x00".join(material)))

    def lookup(self, chain, roots):
        key = self._key(chain, roots)
        if key in self._entries:
            self.hits += 1
            return True, self._entries[key]
        self.misses += 1
        return False, None

    def store(self, chain, roots, failure: Optional[Tuple[Reason, int]]) -> None:
        self._entries[self._key(chain, roots)] = failure


def _structural_chain_check(
    chain: Sequence[Certificate], roots: Mapping[str, Certificate]
) -> Optional[Tuple[Reason, int]]:
    """Time-invariant part of phase 1; None means structurally sound."""
    anchor = chain[0]
    trusted = roots.get(anchor.id)
    if trusted is None or trusted.public_key != anchor.public_key:
        return (Reason.UNTRUSTED_ROOT, 1)
    if not anchor.is_root or anchor.node_type is not NodeType.NA:
        return (Reason.UNTRUSTED_ROOT, 1)
    if not verify_signature(
        anchor.public_key, canonical_body(anchor), anchor.issuer_signature
    ):
        return (Reason.BAD_SIGNATURE, 1)
    for parent, child in zip(chain, chain[1:]):
        if child.parent_id != parent.id:
            return (Reason.UNTRUSTED_ROOT, 1)
        if not verify_signature(
            parent.public_key, canonical_body(child), child.issuer_signature
        ):
            return (Reason.BAD_SIGNATURE, 1)
        if parent.node_type is NodeType.AG and child.node_type is not NodeType.AG:
            return (Reason.TYPE_CONSTRAINT, 1)
        if parent.constraints.max_depth == 0:
            return (Reason.DEPTH_EXHAUSTED, 1)
        if not constraint_leq(child.constraints, parent.constraints):
            return (Reason.CONSTRAINT_VIOLATION, 1)
    return None


def verify_access(
    chain: Sequence[Certificate],
    credential: Credential,
    runtime_manifest: SkillsManifest,
    roots: _RootsInput,
    revocations: RevocationRegistry,
    now: int,
    cache: Optional[VerifiedChainCache] = None,
) -> AccessDecision:
    """Decide whether the leaf agent of `chain` may use `credential`.

    Total over its inputs: every failure mode is a DENY decision carrying
    the first failing phase and its reason; nothing raises. An optional
    cache skips re-verifying signatures of byte-identical chains; expiry,
    revocation, manifest binding, and tier are always evaluated fresh.
    """
    if not chain:
        return AccessDecision.deny(Reason.UNTRUSTED_ROOT, 1)
    root_certs = _root_map(roots)

    # Phase 1: chain integrity.
    if cache is not None:
        cached, failure = cache.lookup(chain, root_certs)
        if not cached:
            failure = _structural_chain_check(chain, root_certs)
            cache.store(chain, root_certs, failure)
    else:
        failure = _structural_chain_check(chain, root_certs)
    if failure is not None:
        return AccessDecision.deny(*failure)
    for cert in chain:
        if not cert.valid_at(now):
            return AccessDecision.deny(Reason.EXPIRED, 1)

    # Phase 2: capability binding.
    leaf = chain[-1]
    if manifest_hash(runtime_manifest) != leaf.manifest_hash:
        return AccessDecision.deny(Reason.MANIFEST_MISMATCH, 2)

    # Phase 3: tier ceiling, after any repro downgrade at the leaf.
    if not effective_tier(leaf).covers(credential.tier):
        return AccessDecision.deny(Reason.TIER_EXCEEDED, 3)

    # Phase 4: revocation.
    for cert in chain:
        if revocations.is_revoked(cert.id, now):
            return AccessDecision.deny(Reason.REVOKED, 4)

    return AccessDecision.allow()


def combined_access(
    agents: Iterable[Certificate], credential: Credential
) -> AccessDecision:
    """Tier decision for a set of agents acting together.

    Permissions never union: the set may reach a credential only if some
    single member may. Chain integrity for each member is verify_access's
    job; this gate composes the per-agent tier ceilings.
    """
    for cert in agents:
        if effective_tier(cert).covers(credential.tier):
            return AccessDecision.allow()
    return AccessDecision.deny(Reason.TIER_EXCEEDED, 3)


# ---------------------------------------------------------------------------
# Trust tree validation
# ---------------------------------------------------------------------------


@dataclass
class TrustTree:
    """A forest of certificates: nodes by id, explicit parent->child edges,
    and the subset of ids trusted as anchors."""

    nodes: Dict[str, Certificate] = field(default_factory=dict)
    edges: List[Tuple[str, str]] = field(default_factory=list)
    root_ids: set = field(default_factory=set)

    def add(self, cert: Certificate) -> None:
        self.nodes[cert.id] = cert
        if cert.is_root:
            self.root_ids.add(cert.id)
        else:
            self.edges.append((cert.parent_id, cert.id))

    def chain_to(self, cert_id: str) -> List[Certificate]:
        """Certificates from the anchor down to `cert_id`."""
        chain: List[Certificate] = []
        current = self.nodes[cert_id]
        while True:
            chain.append(current)
            if current.is_root:
                break
            current = self.nodes[current.parent_id]
        chain.reverse()
        return chain


@dataclass(frozen=True)
class TreeViolation:
    edge: Tuple[str, str]
    rule: Reason
    detail: str


def validate_tree(tree: TrustTree) -> List[TreeViolation]:
    """Check every edge for type, narrowing, and signature validity.

    Returns one violation per broken rule, empty when the tree is sound.
    """
    violations: List[TreeViolation] = []
    for parent_id, child_id in tree.edges:
        parent = tree.nodes.get(parent_id)
        child = tree.nodes.get(child_id)
        edge = (parent_id, child_id)
        if parent is None or child is None:
            violations.append(
                TreeViolation(edge, Reason.UNTRUSTED_ROOT, "dangling edge endpoint")
            )
            continue
        if parent.node_type is NodeType.AG and child.node_type is not NodeType.AG:
            violations.append(
                TreeViolation(
                    edge, Reason.TYPE_CONSTRAINT, "agent delegating to non-agent"
                )
            )
        if not constraint_leq(child.constraints, parent.constraints):
            violations.append(
                TreeViolation(
                    edge,
                    Reason.CONSTRAINT_VIOLATION,
                    "child constraints do not narrow the parent's",
                )
            )
        if not verify_signature(
            parent.public_key, canonical_body(child), child.issuer_signature
        ):
            violations.append(
                TreeViolation(edge, Reason.BAD_SIGNATURE, "issuer signature invalid")
            )
    for root_id in tree.root_ids:
        root = tree.nodes.get(root_id)
        if root is None:
            continue
        if not verify_signature(
            root.public_key, canonical_body(root), root.issuer_signature
        ):
            violations.append(
                TreeViolation(
                    (root_id, root_id), Reason.BAD_SIGNATURE, "root self-signature invalid"
                )
            )
    return violations
