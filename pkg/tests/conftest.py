"""Shared fixture builders: deterministic keys, manifests, and certificate
chains shaped like the simulated pipeline (anchor, org, coordinator,
specialists)."""

from __future__ import annotations

import sys

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

import pytest

from govkit import crypto
from govkit.certificates import (
    Certificate,
    GovernanceLevel,
    ModelBinding,
    NodeType,
    ReproCommitment,
    ReproLevel,
    SkillEntry,
    SkillsManifest,
    Tier,
    TrustConstraints,
    issue_certificate,
    make_root_certificate,
)

HOUR = 3_600_000
NOW = 1_700_000_000_000
WINDOW = (NOW - HOUR, NOW + 1000 * HOUR)

ALL_MODELS = frozenset({"m-alpha", "m-beta", "m-gamma"})


def keypair_for(name: str) -> crypto.KeyPair:
    return crypto.generate_keypair(crypto.digest(b"key:" + name.encode()))


def manifest_for(name: str, tools: Tuple[str, ...] = ("search",)) -> SkillsManifest:
    return SkillsManifest(
        tuple(
            SkillEntry(
                sid=tool,
                ver="1.0",
                h=crypto.digest(f"{name}:{tool}".encode()),
                scopes=("invoke",),
            )
            for tool in tools
        )
    )


@dataclass
class ChainFixture:
    """A root -> org -> coordinator -> leaf chain with keys and manifests."""

    certs: Dict[str, Certificate] = field(default_factory=dict)
    keys: Dict[str, crypto.KeyPair] = field(default_factory=dict)
    manifests: Dict[str, SkillsManifest] = field(default_factory=dict)
    order: List[str] = field(default_factory=list)

    def chain(self, leaf_id: Optional[str] = None) -> List[Certificate]:
        ids = self.order if leaf_id is None else self.order[: self.order.index(leaf_id) + 1]
        return [self.certs[i] for i in ids]

    @property
    def leaf(self) -> Certificate:
        return self.certs[self.order[-1]]

    @property
    def roots(self) -> Dict[str, Certificate]:
        return {self.order[0]: self.certs[self.order[0]]}


def build_chain(
    *,
    leaf_repro: ReproCommitment = ReproCommitment(
        ReproLevel.STATISTICAL, {"theta": "0.85"}
    ),
    leaf_tier: Tier = Tier.T1,
    leaf_depth: int = 1,
) -> ChainFixture:
    """Root CA (NA) -> org (NA) -> coordinator (AG) -> worker (AG)."""
    fixture = ChainFixture()

    def remember(name, cert, pair, manifest):
        fixture.certs[name] = cert
        fixture.keys[name] = pair
        fixture.manifests[name] = manifest
        fixture.order.append(name)

    root_pair = keypair_for("root-ca")
    root = make_root_certificate(
        "root-ca",
        root_pair,
        model=ModelBinding("org", "none", "0"),
        constraints=TrustConstraints(Tier.T0, 5, ALL_MODELS, Fraction(100)),
        not_before=WINDOW[0],
        not_after=WINDOW[1],
    )
    remember("root-ca", root, root_pair, SkillsManifest())

    org_pair = keypair_for("org")
    org_manifest = SkillsManifest()
    org = issue_certificate(
        root,
        root_pair.secret_key,
        subject_id="org",
        public_key=org_pair.public_key,
        model=ModelBinding("org", "none", "0"),
        manifest=org_manifest,
        constraints=TrustConstraints(Tier.T0, 4, ALL_MODELS, Fraction(50)),
        repro=ReproCommitment(ReproLevel.NONE),
        governance_level=GovernanceLevel.L1_POSTHOC,
        node_type=NodeType.NA,
        not_before=WINDOW[0],
        not_after=WINDOW[1],
    )
    remember("org", org, org_pair, org_manifest)

    coord_pair = keypair_for("coordinator")
    coord_manifest = manifest_for("coordinator", ("plan", "dispatch"))
    coordinator = issue_certificate(
        org,
        org_pair.secret_key,
        subject_id="coordinator",
        public_key=coord_pair.public_key,
        model=ModelBinding("acme", "m-alpha", "1.0"),
        manifest=coord_manifest,
        constraints=TrustConstraints(Tier.T1, 3, ALL_MODELS, Fraction(25)),
        repro=ReproCommitment(ReproLevel.STATISTICAL, {"theta": "0.85"}),
        governance_level=GovernanceLevel.L2_SAMPLED,
        node_type=NodeType.AG,
        not_before=WINDOW[0],
        not_after=WINDOW[1],
    )
    remember("coordinator", coordinator, coord_pair, coord_manifest)

    worker_pair = keypair_for("worker")
    worker_manifest = manifest_for("worker", ("search", "summarize"))
    worker = issue_certificate(
        coordinator,
        coord_pair.secret_key,
        subject_id="worker",
        public_key=worker_pair.public_key,
        model=ModelBinding("acme", "m-beta", "1.0"),
        manifest=worker_manifest,
        constraints=TrustConstraints(
            leaf_tier, leaf_depth, frozenset({"m-beta"}), Fraction(10)
        ),
        repro=leaf_repro,
        governance_level=GovernanceLevel.L2_SAMPLED,
        node_type=NodeType.AG,
        not_before=WINDOW[0],
        not_after=WINDOW[1],
    )
    remember("worker", worker, worker_pair, worker_manifest)
    return fixture


@pytest.fixture
def chain_fixture() -> ChainFixture:
    return build_chain()


def synthetic_interactions(
    ledger,
    n: int,
    *,
    agents: Tuple[str, ...] = ("alice", "bob", "carol"),
    ts0: int = NOW,
) -> Dict[int, Tuple[bytes, bytes]]:
    """Append n synthetic records; returns disclosed payloads keyed by seq."""
    from govkit.ledger import RecordDraft, ReproAnchor

    pairs = {a: keypair_for(a) for a in agents}
    skills_hash = crypto.digest(b"skills")
    disclosures: Dict[int, Tuple[bytes, bytes]] = {}
    for i in range(n):
        sender = agents[i % len(agents)]
        receiver = agents[(i + 1) % len(agents)]
        input_bytes = f"payload in {i}".encode()
        output_bytes = f"payload out {i}".encode()
        draft = RecordDraft(
            timestamp=ts0 + i,
            sender_id=sender,
            receiver_id=receiver,
            sender_cert_hash=crypto.digest(b"cert:" + sender.encode()),
            receiver_cert_hash=crypto.digest(b"cert:" + receiver.encode()),
            input_commitment=crypto.digest(input_bytes),
            output_commitment=crypto.digest(output_bytes),
            anchor=ReproAnchor(seed=i, model_ver="1.0", skills_hash=skills_hash),
        )
        record = ledger.append(draft, pairs[sender], pairs[receiver])
        disclosures[record.seq] = (input_bytes, output_bytes)
    return disclosures


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Replay the acceptance scorecard after the run, outside capture."""
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "SCORECARD", None) if module else None
    if lines:
        terminalreporter.section("acceptance scorecard")
        for line in lines:
            terminalreporter.line(line)
