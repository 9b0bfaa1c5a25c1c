"""Pipeline simulation tests: clean-run guarantees, the full attack
matrix with expected layer/reason pairs, baseline comparisons, overhead
scaling, and partial-verifiability marker propagation."""

from __future__ import annotations

import json

import pytest

from govkit.certificates import (
    GovernanceLevel,
    ModelBinding,
    NodeType,
    ReproCommitment,
    ReproLevel,
    Tier,
    TrustConstraints,
    issue_certificate,
)
from govkit.harness import (
    ENTRY_COUNTS,
    FULL_PROFILE,
    SCENARIOS,
    AttackScenario,
    PipelineConfig,
    build_pipeline,
    chain_to,
    delegation_path,
    measure_overhead,
    normalize_scenario_id,
    run_attack,
    run_baseline_comparison,
    run_clean_pipeline,
    run_pipeline,
    scaling_table,
    simulate,
)
from govkit.ledger import Ledger, Marker, RecordDraft, ReproAnchor, record_hash
from govkit.repro import (
    ReplayStatus,
    SeededTextExecutor,
    effective_verification_depth,
    replay_verify,
)
from govkit.verifier import Credential, effective_tier, verify_access

from govkit import crypto


# ---------------------------------------------------------------------------
# Configuration and topology
# ---------------------------------------------------------------------------


class TestConfig:
    @pytest.mark.parametrize("count", [4, 6, 15, 0, -5])
    def test_unsupported_agent_counts_rejected(self, count):
        with pytest.raises(ValueError):
            PipelineConfig(agent_count=count)

    def test_negative_latency_rejected(self):
        with pytest.raises(ValueError):
            PipelineConfig(agent_count=5, mock_latency_s=-0.1)

    @pytest.mark.parametrize(
        "count,entries", [(5, 7), (10, 16), (20, 33)]
    )
    def test_schedule_length_matches_entry_count(self, count, entries):
        config = PipelineConfig(agent_count=count)
        schedule = config.schedule()
        assert len(schedule) == entries == ENTRY_COUNTS[count]

    def test_schedule_shape(self):
        config = PipelineConfig(agent_count=5)
        schedule = config.schedule()
        assert schedule[0] == ("org", "coordinator")
        assert schedule[-1] == ("coordinator", "reviewer")
        middle = schedule[1:-1]
        assert all(sender == "coordinator" for sender, _ in middle)
        # Round-robin dispatch touches every specialist at least once.
        assert {r for _, r in middle} == set(config.specialist_ids)

    @pytest.mark.parametrize("count,specialists", [(5, 3), (10, 8), (20, 18)])
    def test_specialist_count(self, count, specialists):
        config = PipelineConfig(agent_count=count)
        assert len(config.specialist_ids) == specialists
        # Governed population: coordinator + specialists + reviewer.
        assert 1 + specialists + 1 == count


class TestBuildPipeline:
    def test_roles_and_tiers(self):
        ctx = build_pipeline(PipelineConfig(agent_count=5))
        assert ctx.certs["root-ca"].node_type is NodeType.NA
        assert ctx.certs["org"].node_type is NodeType.NA
        coordinator = ctx.certs["coordinator"]
        assert coordinator.node_type is NodeType.AG
        assert coordinator.constraints.max_tier is Tier.T1
        for name in ctx.config.specialist_ids:
            cert = ctx.certs[name]
            assert cert.constraints.max_tier is Tier.T2
            assert cert.constraints.max_depth == 1
            assert cert.model.model_id == "m-beta"
        reviewer = ctx.certs["reviewer"]
        assert reviewer.constraints.max_tier is Tier.T3
        assert reviewer.constraints.max_depth == 0

    def test_every_governed_chain_verifies(self):
        ctx = build_pipeline(PipelineConfig(agent_count=10))
        for name in ("coordinator", *ctx.config.specialist_ids, "reviewer"):
            chain = chain_to(ctx, name)
            decision = verify_access(
                chain,
                Credential("probe", effective_tier(ctx.certs[name])),
                ctx.manifests[name],
                ctx.roots,
                ctx.revocations,
                ctx.certs[name].not_before + 1,
                ctx.cache,
            )
            assert decision.allowed, name

    def test_executors_match_certificate_bindings(self):
        ctx = build_pipeline(PipelineConfig(agent_count=5))
        for name, executor in ctx.executors.items():
            binding = ctx.certs[name].model
            assert executor.model_id == binding.model_id
            assert executor.model_ver == binding.model_ver

    def test_build_warms_the_verification_cache(self):
        report = run_clean_pipeline(PipelineConfig(agent_count=5, seed=7))
        cache = report.context.cache
        # One structural miss per governed chain at build time; the run
        # itself re-verifies only via cache hits.
        assert cache.misses == 5
        assert cache.hits >= report.calls


# ---------------------------------------------------------------------------
# Clean runs
# ---------------------------------------------------------------------------


class TestCleanRuns:
    @pytest.mark.parametrize("count", [5, 10, 20])
    def test_entry_counts_and_no_findings(self, count):
        report = run_clean_pipeline(PipelineConfig(agent_count=count, seed=1))
        assert report.entries == ENTRY_COUNTS[count]
        assert report.detections == ()
        assert report.false_positive_count == 0
        assert report.audit_ok
        assert report.marked_records == 0
        # Every record sent by a committed agent replays clean; only the
        # intake comes from the uncommitted org node.
        assert report.replays_passed == report.entries - 1
        assert report.replays_failed == 0

    def test_storage_within_per_record_band(self):
        report = run_clean_pipeline(PipelineConfig(agent_count=5, seed=2))
        per_record = report.storage_bytes / report.entries
        assert 125 <= per_record <= 500

    def test_same_seed_reproduces_the_ledger(self):
        hashes = []
        for _ in range(2):
            report = run_clean_pipeline(PipelineConfig(agent_count=5, seed=9))
            hashes.append([record_hash(r) for r in report.ledger.records])
        assert hashes[0] == hashes[1]

    def test_different_seeds_differ(self):
        a = run_clean_pipeline(PipelineConfig(agent_count=5, seed=10))
        b = run_clean_pipeline(PipelineConfig(agent_count=5, seed=11))
        assert [record_hash(r) for r in a.ledger.records] != [
            record_hash(r) for r in b.ledger.records
        ]

    def test_ninety_runs_no_false_positives(self):
        calls = 0
        false_positives = 0
        for seed in range(90):
            report = run_clean_pipeline(
                PipelineConfig(agent_count=5, seed=seed)
            )
            calls += report.calls
            false_positives += report.false_positive_count
            assert report.audit_ok
        assert calls == 630
        assert false_positives == 0

    def test_report_serializes_to_json(self):
        report = run_clean_pipeline(PipelineConfig(agent_count=5, seed=3))
        payload = json.loads(json.dumps(report.as_dict()))
        assert payload["entries"] == 7
        assert payload["false_positives"] == 0
        assert payload["attack"] is None


# ---------------------------------------------------------------------------
# Attack scenarios
# ---------------------------------------------------------------------------

# Scenarios whose injected call is refused outright: the run finishes
# with one fewer ledger entry. Gate, ledger, and replay scenarios leave
# the entry count untouched.
BLOCKING = {
    "S1", "S2", "S3", "S8", "S9",
    "E2E-1", "E2E-2", "E2E-3", "E2E-5", "E2E-6",
}


class TestAttackScenarios:
    @pytest.mark.parametrize("sid", sorted(SCENARIOS))
    def test_detected_with_expected_layer_and_reason(self, sid):
        scenario = SCENARIOS[sid]
        report = run_attack(PipelineConfig(agent_count=5, seed=21), scenario)
        outcome = report.attack
        assert outcome.detected
        assert outcome.matched
        assert (outcome.layer, outcome.reason) == scenario.expected
        assert report.false_positive_count == 0

    @pytest.mark.parametrize("sid", sorted(SCENARIOS))
    def test_entry_count_reflects_blocking(self, sid):
        report = run_attack(PipelineConfig(agent_count=5, seed=22), sid)
        expected = ENTRY_COUNTS[5] - (1 if sid in BLOCKING else 0)
        assert report.entries == expected

    @pytest.mark.parametrize("sid", ["S1", "S6", "E2E-4", "E2E-7"])
    def test_detection_survives_scale(self, sid):
        report = run_attack(PipelineConfig(agent_count=20, seed=23), sid)
        assert report.attack.matched
        assert report.false_positive_count == 0

    def test_phantom_delegation_same_mechanism_both_entry_points(self):
        # One forged-chain construction, checked at the access gate and
        # inside a live run; both land on the same reason.
        unit = run_attack(PipelineConfig(agent_count=5, seed=24), "S4")
        live = run_attack(PipelineConfig(agent_count=5, seed=24), "E2E-3")
        assert unit.attack.reason == live.attack.reason == "CONSTRAINT_VIOLATION"

    def test_record_edit_localized_to_its_sequence(self):
        report = run_attack(PipelineConfig(agent_count=5, seed=25), "S5")
        (detection,) = report.detections
        assert detection.seq == 3
        assert not report.audit_ok

    def test_bilateral_rewrite_breaks_at_the_successor(self):
        report = run_attack(PipelineConfig(agent_count=5, seed=26), "E2E-4")
        (detection,) = report.detections
        assert detection.reason == "CHAIN_BREAK"
        assert detection.seq == 4

    def test_replay_divergence_leaves_ledger_intact(self):
        report = run_attack(PipelineConfig(agent_count=5, seed=27), "E2E-7")
        assert report.audit_ok
        assert report.replays_failed == 1
        (detection,) = report.detections
        assert detection.layer == "G2"
        assert detection.seq == 3

    def test_substituted_executor_caught_before_any_record(self):
        report = run_attack(PipelineConfig(agent_count=5, seed=28), "E2E-2")
        (detection,) = report.detections
        assert detection.call_index == 3
        # The refused call never reached the ledger.
        assert all(r.seq != 0 for r in report.ledger.records)
        assert report.entries == 6

    def test_accepts_scenario_objects_and_loose_ids(self):
        scenario = SCENARIOS["E2E-7"]
        by_object = run_attack(PipelineConfig(agent_count=5, seed=29), scenario)
        by_loose = run_attack(PipelineConfig(agent_count=5, seed=29), "e2e7")
        assert by_object.attack.scenario_id == by_loose.attack.scenario_id

    def test_unknown_scenario_rejected(self):
        with pytest.raises(ValueError):
            normalize_scenario_id("S99")

    def test_scenario_table_is_complete(self):
        assert sorted(SCENARIOS) == sorted(
            [f"S{i}" for i in range(1, 10)]
            + [f"E2E-{i}" for i in range(1, 8)]
        )
        for scenario in SCENARIOS.values():
            assert isinstance(scenario, AttackScenario)
            assert scenario.expected_layer in {"G1", "G2", "G3"}
            assert scenario.expected_reason


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def matrix():
    return run_baseline_comparison(PipelineConfig(agent_count=5, seed=31))


class TestBaselines:
    def test_reduced_profiles_detect_nothing(self, matrix):
        for name in ("none", "auth-only", "trace-only"):
            assert sum(matrix[name].values()) == 0, name

    def test_full_stack_detects_everything(self, matrix):
        assert sum(matrix["full"].values()) == 7
        assert all(matrix["full"].values())

    def test_key_possession_misses_capability_escalation(self, matrix):
        assert matrix["auth-only"]["E2E-1"] is False

    def test_unsigned_traces_miss_tampering(self, matrix):
        assert matrix["trace-only"]["E2E-4"] is False

    def test_matrix_covers_the_seven_live_scenarios(self, matrix):
        for row in matrix.values():
            assert sorted(row) == [f"E2E-{i}" for i in range(1, 8)]


# ---------------------------------------------------------------------------
# Overhead and scaling
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def table():
    return scaling_table(repetitions=5, seed=41)


class TestOverhead:
    def test_rows_ordered_and_entry_counts(self, table):
        assert [row.agent_count for row in table] == [5, 10, 20]
        assert [row.entries for row in table] == [7, 16, 33]

    def test_per_agent_cost_stays_within_double(self, table):
        costs = [row.per_agent_s for row in table]
        assert all(cost > 0 for cost in costs)
        assert max(costs) / min(costs) < 2.0

    def test_ledger_appends_dominate_governance_cost(self, table):
        for row in table:
            assert row.g3_share > 0.5, row.agent_count

    def test_storage_scales_with_entries(self, table):
        for row in table:
            assert 125 <= row.storage_bytes / row.entries <= 500
        byte_ratio = table[-1].storage_bytes / table[0].storage_bytes
        entry_ratio = table[-1].entries / table[0].entries
        assert abs(byte_ratio - entry_ratio) / entry_ratio < 0.35

    def test_summary_serializes(self, table):
        payload = json.loads(json.dumps([row.as_dict() for row in table]))
        assert payload[0]["agents"] == 5
        assert payload[0]["timings_ms"]["governance"] > 0

    def test_rejects_nonpositive_repetitions(self):
        with pytest.raises(ValueError):
            measure_overhead(PipelineConfig(agent_count=5), repetitions=0)


# ---------------------------------------------------------------------------
# Partial verifiability
# ---------------------------------------------------------------------------


def _downgrade_coordinator(ctx):
    """Reissue the coordinator with no reproducibility commitment, same
    key. Child certificates stay valid: they were signed by this key."""
    original = ctx.certs["coordinator"]
    ctx.certs["coordinator"] = issue_certificate(
        ctx.certs["org"],
        ctx.keys["org"].secret_key,
        subject_id="coordinator",
        public_key=original.public_key,
        model=original.model,
        manifest=ctx.manifests["coordinator"],
        constraints=original.constraints,
        repro=ReproCommitment(ReproLevel.NONE),
        governance_level=GovernanceLevel.L1_POSTHOC,
        node_type=NodeType.AG,
        not_before=original.not_before,
        not_after=original.not_after,
    )


class TestPartialVerifiability:
    def test_committed_interior_leaves_no_markers(self):
        report = run_clean_pipeline(PipelineConfig(agent_count=5, seed=51))
        assert report.marked_records == 0
        assert all(not r.markers for r in report.ledger.records)

    def test_uncommitted_interior_marks_downstream_records(self):
        ctx = build_pipeline(PipelineConfig(agent_count=5, seed=52))
        _downgrade_coordinator(ctx)
        report = run_pipeline(ctx)
        assert report.false_positive_count == 0
        assert report.audit_ok
        # Intake stays unmarked; every hop below the break is flagged.
        records = report.ledger.records
        assert Marker.PARTIAL_VERIFIABILITY not in records[0].markers
        assert all(
            Marker.PARTIAL_VERIFIABILITY in r.markers for r in records[1:]
        )
        assert report.marked_records == report.entries - 1
        # Nothing the coordinator sent can be replayed any more.
        assert report.replays_passed == 0

    def test_downstream_agent_still_individually_verifiable(self):
        ctx = build_pipeline(PipelineConfig(agent_count=5, seed=53))
        _downgrade_coordinator(ctx)
        report = run_pipeline(ctx)
        specialist = ctx.certs["specialist-1"]

        # The specialist reports back; its own commitment still holds.
        ledger = report.ledger
        input_bytes = b"summarize the findings"
        output = ctx.executors["specialist-1"].execute(
            input_bytes, 77, dict(specialist.repro.config)
        )
        record = ledger.append(
            RecordDraft(
                timestamp=ctx.certs["specialist-1"].not_before + 999,
                sender_id="specialist-1",
                receiver_id="coordinator",
                sender_cert_hash=crypto.digest(b"probe"),
                receiver_cert_hash=crypto.digest(b"probe"),
                input_commitment=crypto.digest(input_bytes),
                output_commitment=crypto.digest(output.encode()),
                anchor=ReproAnchor(
                    seed=77,
                    model_ver=specialist.model.model_ver,
                    skills_hash=specialist.manifest_hash,
                ),
            ),
            ctx.keys["specialist-1"],
            ctx.keys["coordinator"],
        )
        verdict = replay_verify(
            specialist,
            record,
            output,
            input_bytes,
            SeededTextExecutor("m-beta", "1.0"),
        )
        assert verdict.verdict is ReplayStatus.VERIFIED

        # While the coordinator's own records are now inconclusive.
        dispatch = report.ledger.records[1]
        stored_input, stored_output = report.disclosures[dispatch.seq]
        coordinator_verdict = replay_verify(
            ctx.certs["coordinator"],
            dispatch,
            stored_output,
            stored_input,
            SeededTextExecutor("m-alpha", "1.0"),
        )
        assert coordinator_verdict.verdict is ReplayStatus.INCONCLUSIVE

    def test_effective_depth_tracks_the_break(self):
        clean = build_pipeline(PipelineConfig(agent_count=5, seed=54))
        clean_report = run_pipeline(clean)
        chain = [
            clean.certs["org"],
            clean.certs["coordinator"],
            clean.certs["specialist-1"],
        ]
        path = delegation_path(clean, "specialist-1")
        assert path == [
            ("org", "coordinator"),
            ("coordinator", "specialist-1"),
        ]
        assert (
            effective_verification_depth(chain, path, clean_report.ledger)
            == 2
        )

        broken = build_pipeline(PipelineConfig(agent_count=5, seed=54))
        _downgrade_coordinator(broken)
        broken_report = run_pipeline(broken)
        broken_chain = [
            broken.certs["org"],
            broken.certs["coordinator"],
            broken.certs["specialist-1"],
        ]
        assert (
            effective_verification_depth(
                broken_chain, path, broken_report.ledger
            )
            == 1
        )


# ---------------------------------------------------------------------------
# Simulation facade
# ---------------------------------------------------------------------------


class TestSimulate:
    def test_clean_payload_shape(self):
        payload = simulate(5, seed=61)
        assert payload["schema_version"] == 1
        assert payload["entries"] == 7
        assert payload["attack"] is None
        json.dumps(payload)

    def test_attack_payload_reports_the_match(self):
        payload = simulate(5, attack="S1", seed=62)
        assert payload["attack"]["matched"] is True
        assert payload["attack"]["reason"] == "MANIFEST_MISMATCH"

    def test_dashless_scenario_spelling_accepted(self):
        payload = simulate(5, attack="E2E4", seed=63)
        assert payload["attack"]["scenario"] == "E2E-4"
