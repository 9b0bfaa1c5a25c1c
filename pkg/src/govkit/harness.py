"""Simulated multi-agent pipeline with governance instrumentation.

A coordinator fans scripted tasks out to specialist agents under a
reviewer's watch. Every governed call runs the capability check (G1),
commits its payloads for later replay (G2), and lands in a bilaterally
signed hash-chained ledger (G3). Attack scenarios mutate exactly one
ingredient of a run and report which layer caught it with which reason;
baseline profiles strip layers away to show what each one buys.

No network, no real model calls: executors are deterministic mocks, so
detection outcomes are reproducible from a run seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from . import cborcanon, crypto
from .certificates import (
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
    canonical_body,
    certificate_hash,
    issue_certificate,
    make_root_certificate,
    manifest_hash,
)
from .ledger import (
    Ledger,
    Marker,
    RecordDraft,
    ReproAnchor,
    audit,
    canonical_record_body,
    encode_record,
)
from .repro import (
    ReplayStatus,
    SeededTextExecutor,
    chain_verifiability_depth,
    replay_verify,
)
from .verifier import (
    Credential,
    RevocationRegistry,
    TrustTree,
    VerifiedChainCache,
    combined_access,
    effective_tier,
    validate_tree,
    verify_access,
)

EPOCH_MS = 1_700_000_000_000
HOUR_MS = 3_600_000
NOT_BEFORE = EPOCH_MS - HOUR_MS
NOT_AFTER = EPOCH_MS + 1000 * HOUR_MS

PIPELINE_MODELS = frozenset({"m-alpha", "m-beta", "m-gamma"})

# Ledger entries per clean run at each supported scale.
ENTRY_COUNTS = {5: 7, 10: 16, 20: 33}

LAYER_CAPABILITY = "G1"
LAYER_REPLAY = "G2"
LAYER_LEDGER = "G3"

# The capability layer's runtime attestation that the executor an agent
# actually runs matches the model named in its certificate. Not a chain
# verification reason: the chain can be perfectly valid while the agent
# quietly runs something else.
MODEL_BINDING_MISMATCH = "MODEL_BINDING_MISMATCH"

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# Configuration and topology
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    """One simulated pipeline: its scale, run seed, and mock latency.

    The topology is fixed by agent_count: a T1 coordinator, T2
    specialists, and one T3 reviewer under a non-agent org node and a
    self-signed trust anchor. mock_latency_s stands in for the tool call
    itself so governance cost can be read against a realistic baseline.
    """

    agent_count: int = 5
    seed: int = 0
    mock_latency_s: float = 0.0

    def __post_init__(self) -> None:
        if self.agent_count not in ENTRY_COUNTS:
            raise ValueError(
                f"agent_count must be one of {sorted(ENTRY_COUNTS)}"
            )
        if self.mock_latency_s < 0:
            raise ValueError("mock_latency_s must be non-negative")

    @property
    def specialist_ids(self) -> Tuple[str, ...]:
        return tuple(
            f"specialist-{i}" for i in range(1, self.agent_count - 1)
        )

    @property
    def entry_count(self) -> int:
        return ENTRY_COUNTS[self.agent_count]

    def schedule(self) -> List[Tuple[str, str]]:
        """The scripted (sender, receiver) hops of one run.

        An intake from the org node to the coordinator, dispatches
        round-robin across the specialists, and a closing verdict call
        to the reviewer.
        """
        specialists = self.specialist_ids
        hops = [("org", "coordinator")]
        hops.extend(
            ("coordinator", specialists[i % len(specialists)])
            for i in range(self.entry_count - 2)
        )
        hops.append(("coordinator", "reviewer"))
        return hops


@dataclass
class PipelineContext:
    """Everything a run needs: certificates, keys, manifests, executors."""

    config: PipelineConfig
    certs: Dict[str, Certificate]
    keys: Dict[str, crypto.KeyPair]
    manifests: Dict[str, SkillsManifest]
    executors: Dict[str, SeededTextExecutor]
    roots: Dict[str, Certificate]
    revocations: RevocationRegistry
    cache: VerifiedChainCache


def _manifest(name: str, tools: Tuple[str, ...]) -> SkillsManifest:
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


_STAT_THETA = ReproCommitment(ReproLevel.STATISTICAL, {"theta": "0.85"})


def build_pipeline(config: PipelineConfig) -> PipelineContext:
    """Issue the full certificate topology and wire up mock executors.

    Raises RuntimeError if the issued topology fails tree validation or
    any governed agent fails its own access check; a broken build is a
    bug, not a detection.
    """
    keys: Dict[str, crypto.KeyPair] = {}
    certs: Dict[str, Certificate] = {}
    manifests: Dict[str, SkillsManifest] = {}
    executors: Dict[str, SeededTextExecutor] = {}

    def pair(name: str) -> crypto.KeyPair:
        kp = crypto.generate_keypair(
            crypto.digest(f"pipeline:{config.seed}:{name}".encode())
        )
        keys[name] = kp
        return kp

    root_pair = pair("root-ca")
    certs["root-ca"] = make_root_certificate(
        "root-ca",
        root_pair,
        model=ModelBinding("org", "none", "0"),
        constraints=TrustConstraints(Tier.T0, 5, PIPELINE_MODELS, Fraction(100)),
        not_before=NOT_BEFORE,
        not_after=NOT_AFTER,
    )
    manifests["root-ca"] = SkillsManifest()

    org_pair = pair("org")
    manifests["org"] = SkillsManifest()
    certs["org"] = issue_certificate(
        certs["root-ca"],
        root_pair.secret_key,
        subject_id="org",
        public_key=org_pair.public_key,
        model=ModelBinding("org", "none", "0"),
        manifest=manifests["org"],
        constraints=TrustConstraints(Tier.T0, 4, PIPELINE_MODELS, Fraction(50)),
        repro=ReproCommitment(ReproLevel.NONE),
        governance_level=GovernanceLevel.L1_POSTHOC,
        node_type=NodeType.NA,
        not_before=NOT_BEFORE,
        not_after=NOT_AFTER,
    )
    executors["org"] = SeededTextExecutor("none", "0")

    coord_pair = pair("coordinator")
    manifests["coordinator"] = _manifest("coordinator", ("plan", "dispatch"))
    certs["coordinator"] = issue_certificate(
        certs["org"],
        org_pair.secret_key,
        subject_id="coordinator",
        public_key=coord_pair.public_key,
        model=ModelBinding("acme", "m-alpha", "1.0"),
        manifest=manifests["coordinator"],
        constraints=TrustConstraints(Tier.T1, 3, PIPELINE_MODELS, Fraction(25)),
        repro=_STAT_THETA,
        governance_level=GovernanceLevel.L2_SAMPLED,
        node_type=NodeType.AG,
        not_before=NOT_BEFORE,
        not_after=NOT_AFTER,
    )
    executors["coordinator"] = SeededTextExecutor("m-alpha", "1.0")

    for name in config.specialist_ids:
        sp_pair = pair(name)
        manifests[name] = _manifest(name, ("search", "summarize"))
        certs[name] = issue_certificate(
            certs["coordinator"],
            coord_pair.secret_key,
            subject_id=name,
            public_key=sp_pair.public_key,
            model=ModelBinding("acme", "m-beta", "1.0"),
            manifest=manifests[name],
            constraints=TrustConstraints(
                Tier.T2, 1, frozenset({"m-beta"}), Fraction(10)
            ),
            repro=_STAT_THETA,
            governance_level=GovernanceLevel.L2_SAMPLED,
            node_type=NodeType.AG,
            not_before=NOT_BEFORE,
            not_after=NOT_AFTER,
        )
        executors[name] = SeededTextExecutor("m-beta", "1.0")

    rev_pair = pair("reviewer")
    manifests["reviewer"] = _manifest("reviewer", ("review",))
    certs["reviewer"] = issue_certificate(
        certs["coordinator"],
        coord_pair.secret_key,
        subject_id="reviewer",
        public_key=rev_pair.public_key,
        model=ModelBinding("acme", "m-gamma", "1.0"),
        manifest=manifests["reviewer"],
        constraints=TrustConstraints(
            Tier.T3, 0, frozenset({"m-gamma"}), Fraction(10)
        ),
        repro=_STAT_THETA,
        governance_level=GovernanceLevel.L2_SAMPLED,
        node_type=NodeType.AG,
        not_before=NOT_BEFORE,
        not_after=NOT_AFTER,
    )
    executors["reviewer"] = SeededTextExecutor("m-gamma", "1.0")

    tree = TrustTree()
    for cert in certs.values():
        tree.add(cert)
    violations = validate_tree(tree)
    if violations:
        raise RuntimeError(f"pipeline topology is invalid: {violations}")

    ctx = PipelineContext(
        config=config,
        certs=certs,
        keys=keys,
        manifests=manifests,
        executors=executors,
        roots={"root-ca": certs["root-ca"]},
        revocations=RevocationRegistry(),
        cache=VerifiedChainCache(),
    )

    # Verify every governed chain once at build time. This is the
    # issuance-time sanity pass; it also leaves the cache warm, so run
    # timings measure steady-state checks rather than first-contact
    # signature verification.
    for name in ("coordinator", *config.specialist_ids, "reviewer"):
        chain = chain_to(ctx, name)
        decision = verify_access(
            chain,
            Credential("bootstrap", effective_tier(certs[name])),
            manifests[name],
            ctx.roots,
            ctx.revocations,
            EPOCH_MS,
            ctx.cache,
        )
        if not decision.allowed:
            raise RuntimeError(f"agent {name!r} fails its own access check")
    return ctx


def chain_to(ctx: PipelineContext, agent_id: str) -> List[Certificate]:
    """Certificate chain from the trust anchor down to `agent_id`."""
    chain = []
    cert = ctx.certs[agent_id]
    while True:
        chain.append(cert)
        if cert.is_root:
            break
        cert = ctx.certs[cert.parent_id]
    chain.reverse()
    return chain


def delegation_path(
    ctx: PipelineContext, agent_id: str
) -> List[Tuple[str, str]]:
    """The (sender, receiver) hops covering the org-anchored chain to
    `agent_id`, in delegation order."""
    ids = [cert.id for cert in chain_to(ctx, agent_id)[1:]]
    return list(zip(ids, ids[1:]))


def _partial_markers(
    ctx: PipelineContext, sender: str, receiver: str
) -> frozenset:
    """PARTIAL_VERIFIABILITY marker for a hop whose delegation chain has
    an uncommitted interior agent.

    The chain is anchored at the org node; the root-to-org edge is pure
    key custody with no interaction record behind it.
    """
    agents = [
        p
        for p in (sender, receiver)
        if p in ctx.certs and ctx.certs[p].node_type is NodeType.AG
    ]
    if not agents:
        return frozenset()
    deepest = max(agents, key=lambda p: len(chain_to(ctx, p)))
    chain = chain_to(ctx, deepest)[1:]
    n = len(chain) - 1
    if n > 0 and chain_verifiability_depth(chain) < n:
        return frozenset({Marker.PARTIAL_VERIFIABILITY})
    return frozenset()


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Detection:
    """One governance event: which layer fired, why, and where."""

    layer: str
    reason: str
    call_index: Optional[int] = None
    seq: Optional[int] = None
    scenario: str = ""

    def as_dict(self) -> dict:
        return {
            "layer": self.layer,
            "reason": self.reason,
            "call_index": self.call_index,
            "seq": self.seq,
            "scenario": self.scenario,
        }


@dataclass(frozen=True)
class AttackOutcome:
    """Whether an injected scenario was caught as expected."""

    scenario_id: str
    detected: bool
    layer: str
    reason: str
    matched: bool

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario_id,
            "detected": self.detected,
            "layer": self.layer,
            "reason": self.reason,
            "matched": self.matched,
        }


@dataclass
class RunReport:
    """Outcome of one pipeline run.

    A clean run has no detections and a zero false positive count; any
    deviation is a finding, not noise. Detections that match an injected
    scenario's expected layer and reason are attributed to it; everything
    else counts as a false positive.
    """

    agent_count: int
    seed: int
    calls: int
    entries: int
    g1_s: float
    g2_s: float
    g3_s: float
    wall_s: float
    audit_ok: bool
    replays_passed: int
    replays_failed: int
    marked_records: int
    storage_bytes: int
    detections: Tuple[Detection, ...]
    false_positive_count: int
    attack: Optional[AttackOutcome] = None
    ledger: Optional[Ledger] = field(default=None, repr=False)
    disclosures: Dict[int, Tuple[bytes, str]] = field(
        default_factory=dict, repr=False
    )
    context: Optional[PipelineContext] = field(default=None, repr=False)

    @property
    def governance_s(self) -> float:
        return self.g1_s + self.g2_s + self.g3_s

    def as_dict(self) -> dict:
        return {
            "agents": self.agent_count,
            "seed": self.seed,
            "calls": self.calls,
            "entries": self.entries,
            "timings_ms": {
                "g1": self.g1_s * 1e3,
                "g2": self.g2_s * 1e3,
                "g3": self.g3_s * 1e3,
                "governance": self.governance_s * 1e3,
                "wall": self.wall_s * 1e3,
            },
            "audit_ok": self.audit_ok,
            "replays": {
                "passed": self.replays_passed,
                "failed": self.replays_failed,
            },
            "marked_records": self.marked_records,
            "storage_bytes": self.storage_bytes,
            "detections": [d.as_dict() for d in self.detections],
            "false_positives": self.false_positive_count,
            "attack": self.attack.as_dict() if self.attack else None,
        }


# ---------------------------------------------------------------------------
# Check profiles (baselines)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckProfile:
    """Which governance layers a run actually enforces.

    The reduced profiles model common deployment baselines: key
    possession without capability binding, and plain tracing without
    signatures or hash chaining.
    """

    name: str
    capability: bool
    key_possession: bool
    signed_ledger: bool
    keep_traces: bool
    replay: bool


FULL_PROFILE = CheckProfile("full", True, True, True, True, True)
BASELINE_PROFILES = (
    CheckProfile("none", False, False, False, False, False),
    CheckProfile("auth-only", False, True, False, False, False),
    CheckProfile("trace-only", False, False, False, True, False),
)


# ---------------------------------------------------------------------------
# Attack scenarios
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AttackScenario:
    """One adversarial mutation and the detection it must produce."""

    id: str
    summary: str
    point: str
    expected_layer: str
    expected_reason: str

    @property
    def expected(self) -> Tuple[str, str]:
        return (self.expected_layer, self.expected_reason)


def _scenario_rows() -> Tuple[AttackScenario, ...]:
    g1 = LAYER_CAPABILITY
    return (
        AttackScenario(
            "S1",
            "silent escalation: a tool added to the runtime manifest",
            "call:2",
            g1,
            "MANIFEST_MISMATCH",
        ),
        AttackScenario(
            "S2",
            "tool trojanization: a tool implementation swapped in place",
            "call:2",
            g1,
            "MANIFEST_MISMATCH",
        ),
        AttackScenario(
            "S3",
            "model substitution: forged certificate for a swapped model",
            "call:2",
            g1,
            "BAD_SIGNATURE",
        ),
        AttackScenario(
            "S4",
            "phantom delegation: a T2 agent mints a T1 certificate",
            "gate",
            g1,
            "CONSTRAINT_VIOLATION",
        ),
        AttackScenario(
            "S5",
            "evidence tampering: a stored record edited in place",
            "ledger",
            LAYER_LEDGER,
            "SIG_SENDER",
        ),
        AttackScenario(
            "S6",
            "blame shifting: the sender rewrites and re-signs a record",
            "ledger",
            LAYER_LEDGER,
            "SIG_RECEIVER",
        ),
        AttackScenario(
            "S7",
            "credential collusion: two T3 agents pool toward T1 access",
            "gate",
            g1,
            "TIER_EXCEEDED",
        ),
        AttackScenario(
            "S8",
            "chain forgery: a chain rooted at an unknown anchor",
            "call:2",
            g1,
            "UNTRUSTED_ROOT",
        ),
        AttackScenario(
            "S9",
            "depth overflow: delegation from a zero-depth certificate",
            "call:last",
            g1,
            "DEPTH_EXHAUSTED",
        ),
        AttackScenario(
            "E2E-1",
            "capability escalation injected mid-pipeline",
            "call:3",
            g1,
            "MANIFEST_MISMATCH",
        ),
        AttackScenario(
            "E2E-2",
            "model substitution at runtime: executor differs from binding",
            "call:3",
            g1,
            MODEL_BINDING_MISMATCH,
        ),
        AttackScenario(
            "E2E-3",
            "phantom delegation presented inside a live run",
            "call:4",
            g1,
            "CONSTRAINT_VIOLATION",
        ),
        AttackScenario(
            "E2E-4",
            "ledger tampering: bilateral rewrite of an interior record",
            "ledger",
            LAYER_LEDGER,
            "CHAIN_BREAK",
        ),
        AttackScenario(
            "E2E-5",
            "tool trojanization injected mid-pipeline",
            "call:5",
            g1,
            "MANIFEST_MISMATCH",
        ),
        AttackScenario(
            "E2E-6",
            "depth overflow at the verdict call",
            "call:last",
            g1,
            "DEPTH_EXHAUSTED",
        ),
        AttackScenario(
            "E2E-7",
            "replay divergence: committed output the model never produced",
            "call:3",
            LAYER_REPLAY,
            ReplayStatus.VIOLATION.value,
        ),
    )


SCENARIOS: Dict[str, AttackScenario] = {s.id: s for s in _scenario_rows()}


def normalize_scenario_id(raw: str) -> str:
    """Accept S1..S9, E2E-1..E2E-7, and the dashless E2E1..E2E7 forms."""
    text = raw.strip().upper()
    if text.startswith("E2E") and not text.startswith("E2E-") and len(text) > 3:
        text = "E2E-" + text[3:]
    if text not in SCENARIOS:
        raise ValueError(f"unknown attack scenario {raw!r}")
    return text


# ---------------------------------------------------------------------------
# Attack plans
# ---------------------------------------------------------------------------


@dataclass
class _CallOverride:
    """Per-call substitutions an attacker controls."""

    chain: Optional[List[Certificate]] = None
    runtime_manifest: Optional[SkillsManifest] = None
    executor: Optional[SeededTextExecutor] = None
    output_text: Optional[str] = None


@dataclass(frozen=True)
class _LedgerMutation:
    """Post-run rewrite of one stored record."""

    seq: int
    resign_sender: bool = False
    resign_receiver: bool = False


@dataclass
class _Plan:
    overrides: Dict[int, _CallOverride] = field(default_factory=dict)
    ledger_mutation: Optional[_LedgerMutation] = None
    gate: Optional[Callable[[PipelineContext], Optional[Detection]]] = None


def _adversary_pair(tag: str) -> crypto.KeyPair:
    return crypto.generate_keypair(crypto.digest(b"adversary:" + tag.encode()))


def _forge_certificate(
    *,
    subject_id: str,
    issuer: Certificate,
    signing_secret: bytes,
    public_key: bytes,
    model: ModelBinding,
    manifest: SkillsManifest,
    constraints: TrustConstraints,
    repro: ReproCommitment = _STAT_THETA,
) -> Certificate:
    """Build and sign a certificate with no issuance-rule checks.

    This is the attacker's tool: it produces chains the honest issuance
    path refuses to create, so the verifier can be shown catching them.
    """
    unsigned = Certificate(
        id=subject_id,
        parent_id=issuer.id,
        public_key=public_key,
        model=model,
        manifest_hash=manifest_hash(manifest),
        constraints=constraints,
        repro=repro,
        governance_level=GovernanceLevel.L2_SAMPLED,
        node_type=NodeType.AG,
        not_before=NOT_BEFORE,
        not_after=NOT_AFTER,
        issuer_signature=crypto.Signature(b"\x00" * 64),
    )
    signature = crypto.sign(signing_secret, canonical_body(unsigned))
    return replace(unsigned, issuer_signature=signature)


def _resolve_call(point: str, config: PipelineConfig) -> int:
    tag = point.split(":", 1)[1]
    return config.entry_count if tag == "last" else int(tag)


def _phantom_chain(
    ctx: PipelineContext, issuer_id: str
) -> Tuple[List[Certificate], SkillsManifest]:
    """A chain extended by a self-serving T1 certificate minted by a T2
    agent; properly signed, structurally non-monotone."""
    issuer = ctx.certs[issuer_id]
    manifest = _manifest("phantom", ("escalate",))
    phantom = _forge_certificate(
        subject_id="phantom",
        issuer=issuer,
        signing_secret=ctx.keys[issuer_id].secret_key,
        public_key=_adversary_pair("phantom").public_key,
        model=ModelBinding("acme", "m-beta", "1.0"),
        manifest=manifest,
        constraints=TrustConstraints(
            Tier.T1, 0, frozenset({"m-beta"}), Fraction(1)
        ),
    )
    return chain_to(ctx, issuer_id) + [phantom], manifest


def _minion_chain(
    ctx: PipelineContext,
) -> Tuple[List[Certificate], SkillsManifest]:
    """The reviewer (depth 0) delegating anyway."""
    reviewer = ctx.certs["reviewer"]
    manifest = _manifest("minion", ("review",))
    minion = _forge_certificate(
        subject_id="minion",
        issuer=reviewer,
        signing_secret=ctx.keys["reviewer"].secret_key,
        public_key=_adversary_pair("minion").public_key,
        model=ModelBinding("acme", "m-gamma", "1.0"),
        manifest=manifest,
        constraints=TrustConstraints(
            Tier.T3, 0, frozenset({"m-gamma"}), Fraction(1)
        ),
    )
    return chain_to(ctx, "reviewer") + [minion], manifest


def _build_plan(ctx: PipelineContext, scenario: AttackScenario) -> _Plan:
    config = ctx.config
    schedule = config.schedule()
    plan = _Plan()
    sid = scenario.id

    if sid in ("S1", "E2E-1"):
        call = _resolve_call(scenario.point, config)
        target = schedule[call - 1][1]
        extra = SkillEntry(
            sid="exfiltrate",
            ver="0.1",
            h=crypto.digest(b"exfiltrate"),
            scopes=("invoke",),
        )
        plan.overrides[call] = _CallOverride(
            runtime_manifest=ctx.manifests[target].with_entry(extra)
        )
    elif sid in ("S2", "E2E-5"):
        call = _resolve_call(scenario.point, config)
        target = schedule[call - 1][1]
        entries = list(ctx.manifests[target].entries)
        entries[0] = replace(entries[0], h=crypto.digest(b"trojan payload"))
        plan.overrides[call] = _CallOverride(
            runtime_manifest=SkillsManifest(tuple(entries))
        )
    elif sid == "S3":
        call = _resolve_call(scenario.point, config)
        target = schedule[call - 1][1]
        real = ctx.certs[target]
        forged = _forge_certificate(
            subject_id=target,
            issuer=ctx.certs["coordinator"],
            signing_secret=_adversary_pair("imposter").secret_key,
            public_key=real.public_key,
            model=ModelBinding("acme", "m-evil", "6.6"),
            manifest=ctx.manifests[target],
            constraints=real.constraints,
        )
        plan.overrides[call] = _CallOverride(
            chain=chain_to(ctx, "coordinator") + [forged],
            runtime_manifest=ctx.manifests[target],
        )
    elif sid in ("S4", "E2E-3"):
        # Same mechanism at two entry points: S4 checks the minted chain
        # directly at the access gate, E2E-3 presents it inside a run.
        issuer = config.specialist_ids[0]
        chain, manifest = _phantom_chain(ctx, issuer)
        if sid == "S4":

            def gate(c: PipelineContext) -> Optional[Detection]:
                decision = verify_access(
                    chain,
                    Credential("restricted", Tier.T1),
                    manifest,
                    c.roots,
                    c.revocations,
                    EPOCH_MS,
                    c.cache,
                )
                if decision.allowed:
                    return None
                return Detection(
                    LAYER_CAPABILITY, decision.reason.value, call_index=None
                )

            plan.gate = gate
        else:
            call = _resolve_call(scenario.point, config)
            plan.overrides[call] = _CallOverride(
                chain=chain, runtime_manifest=manifest
            )
    elif sid == "S5":
        plan.ledger_mutation = _LedgerMutation(seq=3)
    elif sid == "S6":
        plan.ledger_mutation = _LedgerMutation(seq=3, resign_sender=True)
    elif sid == "S7":

        def gate(c: PipelineContext) -> Optional[Detection]:
            conspirator = issue_certificate(
                c.certs["coordinator"],
                c.keys["coordinator"].secret_key,
                subject_id="conspirator",
                public_key=_adversary_pair("conspirator").public_key,
                model=ModelBinding("acme", "m-gamma", "1.0"),
                manifest=_manifest("conspirator", ("review",)),
                constraints=TrustConstraints(
                    Tier.T3, 0, frozenset({"m-gamma"}), Fraction(1)
                ),
                repro=_STAT_THETA,
                governance_level=GovernanceLevel.L2_SAMPLED,
                node_type=NodeType.AG,
                not_before=NOT_BEFORE,
                not_after=NOT_AFTER,
            )
            decision = combined_access(
                [c.certs["reviewer"], conspirator],
                Credential("restricted", Tier.T1),
            )
            if decision.allowed:
                return None
            return Detection(LAYER_CAPABILITY, decision.reason.value)

        plan.gate = gate
    elif sid == "S8":
        call = _resolve_call(scenario.point, config)
        target = schedule[call - 1][1]
        shadow_pair = _adversary_pair("shadow-ca")
        shadow_root = make_root_certificate(
            "shadow-ca",
            shadow_pair,
            model=ModelBinding("org", "none", "0"),
            constraints=TrustConstraints(
                Tier.T0, 5, PIPELINE_MODELS, Fraction(100)
            ),
            not_before=NOT_BEFORE,
            not_after=NOT_AFTER,
        )
        imposter_manifest = _manifest("imposter", ("search",))
        imposter = issue_certificate(
            shadow_root,
            shadow_pair.secret_key,
            subject_id=target,
            public_key=_adversary_pair("imposter-key").public_key,
            model=ModelBinding("acme", "m-beta", "1.0"),
            manifest=imposter_manifest,
            constraints=TrustConstraints(
                Tier.T2, 1, frozenset({"m-beta"}), Fraction(10)
            ),
            repro=_STAT_THETA,
            governance_level=GovernanceLevel.L2_SAMPLED,
            node_type=NodeType.AG,
            not_before=NOT_BEFORE,
            not_after=NOT_AFTER,
        )
        plan.overrides[call] = _CallOverride(
            chain=[shadow_root, imposter],
            runtime_manifest=imposter_manifest,
        )
    elif sid in ("S9", "E2E-6"):
        call = _resolve_call(scenario.point, config)
        chain, manifest = _minion_chain(ctx)
        plan.overrides[call] = _CallOverride(
            chain=chain, runtime_manifest=manifest
        )
    elif sid == "E2E-2":
        call = _resolve_call(scenario.point, config)
        plan.overrides[call] = _CallOverride(
            executor=SeededTextExecutor("m-delta", "9.9")
        )
    elif sid == "E2E-4":
        plan.ledger_mutation = _LedgerMutation(
            seq=3, resign_sender=True, resign_receiver=True
        )
    elif sid == "E2E-7":
        call = _resolve_call(scenario.point, config)
        plan.overrides[call] = _CallOverride(output_text="#" * 120)
    else:
        raise ValueError(f"no plan for scenario {sid!r}")
    return plan


def _apply_ledger_mutation(
    ledger: Ledger,
    keys: Mapping[str, crypto.KeyPair],
    mutation: _LedgerMutation,
) -> None:
    record = ledger.records[mutation.seq - 1]
    rewritten = replace(
        record, output_commitment=crypto.digest(b"rewritten history")
    )
    body = canonical_record_body(rewritten)
    sender_sig = (
        crypto.sign(keys[record.sender_id].secret_key, body)
        if mutation.resign_sender
        else record.sender_sig
    )
    receiver_sig = (
        crypto.sign(keys[record.receiver_id].secret_key, body)
        if mutation.resign_receiver
        else record.receiver_sig
    )
    ledger.records[mutation.seq - 1] = replace(
        rewritten, sender_sig=sender_sig, receiver_sig=receiver_sig
    )


# ---------------------------------------------------------------------------
# The run engine
# ---------------------------------------------------------------------------


def _call_seed(run_seed: int, call_index: int) -> int:
    material = crypto.digest(f"run:{run_seed}:call:{call_index}".encode())
    return int.from_bytes(bytes(material)[:8], "big")


def _run(
    ctx: PipelineContext,
    profile: CheckProfile,
    plan: Optional[_Plan],
    scenario: Optional[AttackScenario],
) -> RunReport:
    config = ctx.config
    schedule = config.schedule()
    overrides = plan.overrides if plan else {}
    ledger = Ledger() if profile.signed_ledger else None
    traces: Optional[List[dict]] = [] if profile.keep_traces and ledger is None else None
    detections: List[Detection] = []
    disclosures: Dict[int, Tuple[bytes, str]] = {}
    g1 = g2 = g3 = 0.0
    marked = 0
    wall_start = time.perf_counter()

    for call_index, (sender, receiver) in enumerate(schedule, start=1):
        override = overrides.get(call_index, _CallOverride())
        now = EPOCH_MS + call_index
        input_bytes = (
            f"run {config.seed} call {call_index}: {sender} to {receiver}"
        ).encode()
        seed = _call_seed(config.seed, call_index)

        if profile.capability:
            started = time.perf_counter()
            chain = (
                override.chain
                if override.chain is not None
                else chain_to(ctx, receiver)
            )
            leaf = chain[-1]
            manifest = (
                override.runtime_manifest
                if override.runtime_manifest is not None
                else ctx.manifests.get(leaf.id, SkillsManifest())
            )
            decision = verify_access(
                chain,
                Credential(f"task-{call_index}", effective_tier(leaf)),
                manifest,
                ctx.roots,
                ctx.revocations,
                now,
                ctx.cache,
            )
            denial: Optional[str] = None
            if not decision.allowed:
                denial = decision.reason.value
            else:
                runtime_executor = override.executor or ctx.executors.get(
                    leaf.id
                )
                if (
                    leaf.node_type is NodeType.AG
                    and runtime_executor is not None
                    and (runtime_executor.model_id, runtime_executor.model_ver)
                    != (leaf.model.model_id, leaf.model.model_ver)
                ):
                    denial = MODEL_BINDING_MISMATCH
            g1 += time.perf_counter() - started
            if denial is not None:
                detections.append(
                    Detection(LAYER_CAPABILITY, denial, call_index=call_index)
                )
                continue
        elif profile.key_possession:
            # Key custody alone: both parties hold registered keys. Says
            # nothing about capabilities, depth, or record integrity.
            if sender not in ctx.keys or receiver not in ctx.keys:
                detections.append(
                    Detection(
                        LAYER_CAPABILITY, "UNKNOWN_KEY", call_index=call_index
                    )
                )
                continue

        if config.mock_latency_s:
            time.sleep(config.mock_latency_s)
        sender_cert = ctx.certs[sender]
        output_text = (
            override.output_text
            if override.output_text is not None
            else ctx.executors[sender].execute(
                input_bytes, seed, dict(sender_cert.repro.config)
            )
        )

        started = time.perf_counter()
        input_commitment = crypto.digest(input_bytes)
        output_commitment = crypto.digest(output_text.encode())
        anchor = ReproAnchor(
            seed=seed,
            model_ver=sender_cert.model.model_ver,
            skills_hash=sender_cert.manifest_hash,
        )
        markers = _partial_markers(ctx, sender, receiver)
        g2 += time.perf_counter() - started
        if markers:
            marked += 1

        if ledger is not None:
            started = time.perf_counter()
            record = ledger.append(
                RecordDraft(
                    timestamp=now,
                    sender_id=sender,
                    receiver_id=receiver,
                    sender_cert_hash=certificate_hash(sender_cert),
                    receiver_cert_hash=certificate_hash(ctx.certs[receiver]),
                    input_commitment=input_commitment,
                    output_commitment=output_commitment,
                    anchor=anchor,
                    markers=markers,
                ),
                ctx.keys[sender],
                ctx.keys[receiver],
            )
            g3 += time.perf_counter() - started
            disclosures[record.seq] = (input_bytes, output_text)
        elif traces is not None:
            traces.append(
                {
                    "seq": len(traces) + 1,
                    "sender": sender,
                    "receiver": receiver,
                    "input": input_bytes.decode(),
                    "output": output_text,
                }
            )

    if plan and plan.ledger_mutation:
        if ledger is not None:
            _apply_ledger_mutation(ledger, ctx.keys, plan.ledger_mutation)
        elif traces:
            index = min(plan.ledger_mutation.seq, len(traces)) - 1
            traces[index]["output"] = "rewritten history"

    audit_ok = True
    if ledger is not None:
        report = audit(ledger)
        if not report.ok:
            audit_ok = False
            detections.append(
                Detection(
                    LAYER_LEDGER,
                    report.failure.value,
                    seq=report.first_bad_seq,
                )
            )

    replays_passed = replays_failed = 0
    if profile.replay and ledger is not None:
        for record in ledger.records:
            cert = ctx.certs.get(record.sender_id)
            if (
                cert is None
                or cert.node_type is not NodeType.AG
                or cert.repro.level is ReproLevel.NONE
            ):
                continue
            stored_input, stored_output = disclosures[record.seq]
            outcome = replay_verify(
                cert,
                record,
                stored_output,
                stored_input,
                SeededTextExecutor(cert.model.model_id, cert.model.model_ver),
            )
            if outcome.verdict is ReplayStatus.VIOLATION:
                replays_failed += 1
                detections.append(
                    Detection(
                        LAYER_REPLAY,
                        ReplayStatus.VIOLATION.value,
                        seq=record.seq,
                    )
                )
            else:
                replays_passed += 1

    if plan and plan.gate and profile.capability:
        gate_detection = plan.gate(ctx)
        if gate_detection is not None:
            detections.append(gate_detection)

    wall_s = time.perf_counter() - wall_start

    attributed: List[Detection] = []
    matched = False
    false_positives = 0
    for detection in detections:
        if (
            scenario is not None
            and not matched
            and (detection.layer, detection.reason) == scenario.expected
        ):
            matched = True
            attributed.append(replace(detection, scenario=scenario.id))
        else:
            false_positives += 1
            attributed.append(detection)

    attack = None
    if scenario is not None:
        first = attributed[0] if attributed else None
        attack = AttackOutcome(
            scenario_id=scenario.id,
            detected=bool(attributed),
            layer=first.layer if first else "",
            reason=first.reason if first else "",
            matched=matched,
        )

    storage = 0
    if ledger is not None:
        storage = sum(
            len(cborcanon.length_prefixed(encode_record(r)))
            for r in ledger.records
        )

    return RunReport(
        agent_count=config.agent_count,
        seed=config.seed,
        calls=len(schedule),
        entries=len(ledger.records) if ledger is not None else 0,
        g1_s=g1,
        g2_s=g2,
        g3_s=g3,
        wall_s=wall_s,
        audit_ok=audit_ok,
        replays_passed=replays_passed,
        replays_failed=replays_failed,
        marked_records=marked,
        storage_bytes=storage,
        detections=tuple(attributed),
        false_positive_count=false_positives,
        attack=attack,
        ledger=ledger,
        disclosures=disclosures,
        context=ctx,
    )


# ---------------------------------------------------------------------------
# Public entry points
# ---------------------------------------------------------------------------


def run_pipeline(
    ctx: PipelineContext, profile: CheckProfile = FULL_PROFILE
) -> RunReport:
    """Execute the scripted run against an existing context.

    Useful when the caller wants to alter the context first, for example
    swapping in a certificate with a weaker reproducibility commitment
    to watch the partial-verifiability markers appear.
    """
    return _run(ctx, profile, None, None)


def run_clean_pipeline(config: PipelineConfig) -> RunReport:
    """Execute the scripted run with every layer on and nothing injected."""
    return run_pipeline(build_pipeline(config))


def run_attack(
    config: PipelineConfig,
    scenario: "AttackScenario | str",
    profile: CheckProfile = FULL_PROFILE,
) -> RunReport:
    """Inject one scenario into a run under the given check profile."""
    if isinstance(scenario, str):
        scenario = SCENARIOS[normalize_scenario_id(scenario)]
    ctx = build_pipeline(config)
    plan = _build_plan(ctx, scenario)
    return _run(ctx, profile, plan, scenario)


E2E_SCENARIO_IDS = tuple(s for s in SCENARIOS if s.startswith("E2E-"))


def run_baseline_comparison(
    config: PipelineConfig,
    scenario_ids: Optional[Sequence[str]] = None,
) -> Dict[str, Dict[str, bool]]:
    """Detection matrix: each baseline profile and the full stack against
    the end-to-end scenarios. Values are detected-or-not."""
    ids = tuple(scenario_ids) if scenario_ids is not None else E2E_SCENARIO_IDS
    matrix: Dict[str, Dict[str, bool]] = {}
    for profile in (*BASELINE_PROFILES, FULL_PROFILE):
        row: Dict[str, bool] = {}
        for sid in ids:
            report = run_attack(config, sid, profile)
            row[sid] = report.attack.detected if report.attack else False
        matrix[profile.name] = row
    return matrix


# ---------------------------------------------------------------------------
# Overhead measurement
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OverheadSummary:
    """Mean per-run governance cost at one pipeline scale."""

    agent_count: int
    repetitions: int
    entries: int
    g1_s: float
    g2_s: float
    g3_s: float
    per_agent_s: float
    storage_bytes: int

    @property
    def governance_s(self) -> float:
        return self.g1_s + self.g2_s + self.g3_s

    @property
    def g3_share(self) -> float:
        total = self.governance_s
        return self.g3_s / total if total else 0.0

    def as_dict(self) -> dict:
        return {
            "agents": self.agent_count,
            "repetitions": self.repetitions,
            "entries": self.entries,
            "timings_ms": {
                "g1": self.g1_s * 1e3,
                "g2": self.g2_s * 1e3,
                "g3": self.g3_s * 1e3,
                "governance": self.governance_s * 1e3,
                "per_agent": self.per_agent_s * 1e3,
            },
            "g3_share": self.g3_share,
            "storage_bytes": self.storage_bytes,
        }


def measure_overhead(
    config: PipelineConfig, repetitions: int = 3
) -> OverheadSummary:
    """Mean per-layer governance timings over repeated clean runs."""
    if repetitions < 1:
        raise ValueError("repetitions must be positive")
    g1 = g2 = g3 = 0.0
    entries = storage = 0
    for rep in range(repetitions):
        report = run_clean_pipeline(
            replace(config, seed=config.seed + rep)
        )
        g1 += report.g1_s
        g2 += report.g2_s
        g3 += report.g3_s
        entries = report.entries
        storage = report.storage_bytes
    g1 /= repetitions
    g2 /= repetitions
    g3 /= repetitions
    return OverheadSummary(
        agent_count=config.agent_count,
        repetitions=repetitions,
        entries=entries,
        g1_s=g1,
        g2_s=g2,
        g3_s=g3,
        per_agent_s=(g1 + g2 + g3) / config.agent_count,
        storage_bytes=storage,
    )


def scaling_table(
    repetitions: int = 3,
    agent_counts: Sequence[int] = (5, 10, 20),
    seed: int = 0,
) -> List[OverheadSummary]:
    """Overhead summaries across pipeline scales, smallest first."""
    return [
        measure_overhead(
            PipelineConfig(agent_count=count, seed=seed), repetitions
        )
        for count in sorted(agent_counts)
    ]


# ---------------------------------------------------------------------------
# One-call simulation facade
# ---------------------------------------------------------------------------


def simulate(
    agent_count: int = 5,
    attack: Optional[str] = None,
    seed: int = 0,
    mock_latency_s: float = 0.0,
) -> dict:
    """Run one pipeline, clean or with an injected scenario, and return a
    JSON-ready report."""
    config = PipelineConfig(
        agent_count=agent_count, seed=seed, mock_latency_s=mock_latency_s
    )
    if attack is None:
        report = run_clean_pipeline(config)
    else:
        report = run_attack(config, attack)
    payload = report.as_dict()
    payload["schema_version"] = SCHEMA_VERSION
    return payload
