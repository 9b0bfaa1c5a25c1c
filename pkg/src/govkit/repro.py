"""Replay-based behavioral verification.

Covers the software path of the verifiability story: mock model
executors, the replay check against a logged interaction, divergence
budget arithmetic (how many clean trials bound an adversary's divergence
rate), and depth accounting over delegation chains: how far down a chain
behavior stays checkable, and the effective floor once the interaction
log is considered too.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional, Protocol, Sequence

from . import cborcanon, crypto
from .certificates import Certificate, NodeType, ReproLevel
from .ledger import InteractionRecord, chain_auditability_depth
from .similarity import SimilarityReport, char_match, ensemble_evaluate


class InputCommitmentMismatch(Exception):
    """Disclosed input does not hash to the record's input commitment."""


class ReplayStatus(str, Enum):
    VERIFIED = "VERIFIED"
    VIOLATION = "VIOLATION"
    INCONCLUSIVE = "INCONCLUSIVE"


@dataclass(frozen=True)
class ReplayVerdict:
    verdict: ReplayStatus
    report: Optional[SimilarityReport] = None


class ModelExecutor(Protocol):
    """Minimal executor surface the replay check depends on."""

    determinism: str

    def execute(
        self, input_bytes: bytes, seed: int, config: Optional[Mapping[str, str]]
    ) -> str: ...


# Shared vocabulary for the mock executors. Sequences are driven by a
# model-and-input-seeded RNG, so equal calls repeat exactly and distinct
# models produce unrelated word orders.
_WORDS = (
    "amber", "basin", "cedar", "delta", "ember", "fjord", "gleam", "harbor",
    "inlet", "juniper", "kernel", "lumen", "meadow", "nectar", "onyx",
    "prairie", "quartz", "ridge", "summit", "thicket", "umber", "vellum",
    "willow", "zenith", "brook", "cinder", "drift", "evergreen", "flint",
    "grove", "heather", "isle", "jasper", "knoll", "lagoon", "mesa",
    "nimbus", "orchard", "pebble", "quill", "reef", "sable", "tundra",
    "vale", "wharf", "yarrow", "zephyr", "aspen",
)


def _material(
    parts: Sequence, input_bytes: bytes, seed: int, config
) -> random.Random:
    items = list(parts) + [bytes(input_bytes), seed]
    if config:
        items.append(sorted((str(k), str(v)) for k, v in dict(config).items()))
    raw = crypto.digest(cborcanon.encode(items))
    return random.Random(int.from_bytes(raw, "big"))


class SeededTextExecutor:
    """Fully deterministic mock model: equal inputs give identical text."""

    determinism = "full"

    def __init__(
        self, model_id: str, model_ver: str = "1.0", words_per_output: int = 24
    ) -> None:
        self.model_id = model_id
        self.model_ver = model_ver
        self.words_per_output = words_per_output

    def execute(
        self,
        input_bytes: bytes,
        seed: int,
        config: Optional[Mapping[str, str]] = None,
    ) -> str:
        rng = _material(
            ["exec", self.model_id, self.model_ver], input_bytes, seed, config
        )
        return " ".join(
            rng.choice(_WORDS) for _ in range(self.words_per_output)
        )


class NoisyExecutor:
    """Statistical-class wrapper: diverges on a fixed fraction of inputs.

    Divergence is decided deterministically per (salt, input, seed), so a
    given prompt either always replays clean or always comes back as an
    unrelated resample. The rate is the measure of diverging prompts.
    """

    determinism = "statistical"

    def __init__(self, base, divergence_rate: float, salt: bytes = b"") -> None:
        if not 0.0 <= divergence_rate <= 1.0:
            raise ValueError("divergence rate must lie in [0, 1]")
        self.base = base
        self.divergence_rate = divergence_rate
        self.salt = salt

    @property
    def model_id(self) -> str:
        return self.base.model_id

    @property
    def model_ver(self) -> str:
        return self.base.model_ver

    def execute(
        self,
        input_bytes: bytes,
        seed: int,
        config: Optional[Mapping[str, str]] = None,
    ) -> str:
        text = self.base.execute(input_bytes, seed, config)
        rng = _material(["noise", self.salt], input_bytes, seed, None)
        if rng.random() < self.divergence_rate:
            return " ".join(rng.choice(_WORDS) for _ in text.split())
        return text


def replay_verify(
    cert: Certificate,
    record: InteractionRecord,
    original_output: str,
    disclosed_input: bytes,
    executor: ModelExecutor,
) -> ReplayVerdict:
    """Re-run the committed computation and compare against the original.

    The disclosed input must hash to the record's input commitment before
    anything runs; a mismatch means the disclosure itself is tampered and
    raises rather than producing a verdict. A certificate without a
    reproducibility commitment yields INCONCLUSIVE. A full commitment
    demands byte-equal output; a statistical one passes at or above the
    committed character-match threshold. The four-metric report rides
    along whenever the executor actually ran.
    """
    if crypto.digest(disclosed_input) != record.input_commitment:
        raise InputCommitmentMismatch(
            "disclosed input does not match the stored commitment"
        )
    level = cert.repro.level
    if level is ReproLevel.NONE:
        return ReplayVerdict(ReplayStatus.INCONCLUSIVE)
    replayed = executor.execute(
        disclosed_input, record.anchor.seed, dict(cert.repro.config)
    )
    report = ensemble_evaluate(original_output, replayed)
    if level is ReproLevel.FULL:
        ok = replayed == original_output
    else:
        ok = char_match(original_output, replayed) >= cert.repro.theta()
    return ReplayVerdict(
        ReplayStatus.VERIFIED if ok else ReplayStatus.VIOLATION, report
    )


def epsilon_bound(n: int, alpha: float) -> float:
    """Divergence rate ruled out (at significance alpha) by n clean trials.

    An executor diverging on more than this fraction of inputs passes n
    independent trials with probability below alpha.
    """
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ValueError("n must be a positive integer")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return 1.0 - alpha ** (1.0 / n)


def required_budget(epsilon: float, alpha: float) -> int:
    """Smallest trial count n with epsilon_bound(n, alpha) <= epsilon."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    # ceil(ln(1/alpha) / epsilon) lands within a step or two of the exact
    # answer; walk to the precise minimum from there.
    n = max(1, math.ceil(math.log(1.0 / alpha) / epsilon))
    while n > 1 and epsilon_bound(n - 1, alpha) <= epsilon:
        n -= 1
    while epsilon_bound(n, alpha) > epsilon:
        n += 1
    return n


@dataclass(frozen=True)
class VerificationBudget:
    n: int
    alpha: float
    epsilon: float

    def __post_init__(self) -> None:
        if abs(self.epsilon - epsilon_bound(self.n, self.alpha)) > 1e-12:
            raise ValueError("epsilon must equal 1 - alpha**(1/n)")

    @classmethod
    def for_trials(cls, n: int, alpha: float) -> "VerificationBudget":
        return cls(n=n, alpha=alpha, epsilon=epsilon_bound(n, alpha))


def chain_verifiability_depth(chain: Sequence[Certificate]) -> int:
    """Position of the first uncommitted agent in a delegation chain.

    chain[0] must be a non-agent trust anchor; positions 1..n hold the
    delegated members. Returns the first position whose holder is an
    agent with no reproducibility commitment, or n when every agent made
    one. Non-agent interior nodes never cap the depth.
    """
    if not chain or chain[0].node_type is not NodeType.NA:
        raise ValueError("chain must start with a non-agent trust anchor")
    n = len(chain) - 1
    for j in range(1, n + 1):
        cert = chain[j]
        if cert.node_type is NodeType.AG and cert.repro.level is ReproLevel.NONE:
            return j
    return n


def effective_verification_depth(
    chain: Sequence[Certificate], path: Sequence, ledger
) -> int:
    """min of the chain's verifiability depth and the log's hop coverage.

    `path` must list the (sender, receiver) hop for each delegation edge
    of `chain`, in order. A result below len(path) means downstream
    records should carry the PARTIAL_VERIFIABILITY marker.
    """
    n = len(chain) - 1
    if len(path) != n:
        raise ValueError(
            f"path has {len(path)} hops for a chain with {n} edges"
        )
    for j, edge in enumerate(path):
        expected = (chain[j].id, chain[j + 1].id)
        if tuple(edge) != expected:
            raise ValueError(
                f"hop {j + 1} is {tuple(edge)}, chain edge is {expected}"
            )
    return min(
        chain_verifiability_depth(chain),
        chain_auditability_depth(path, ledger),
    )
