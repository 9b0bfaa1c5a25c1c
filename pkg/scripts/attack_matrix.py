"""Run every attack scenario against the governed pipeline and print the
detection matrix, then compare baseline check profiles on the end-to-end
scenarios.

Each scenario row shows the layer that caught the mutation and the reason
code the stack reported. The baseline table shows how many end-to-end
scenarios each reduced profile detects.
"""

from __future__ import annotations

import argparse
import sys
from typing import List, Optional

from govkit.harness import (
    E2E_SCENARIO_IDS,
    SCENARIOS,
    PipelineConfig,
    run_attack,
    run_baseline_comparison,
    run_clean_pipeline,
)


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--agents", type=int, default=5, choices=(5, 10, 20))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--skip-baselines",
        action="store_true",
        help="only run the per-scenario matrix",
    )
    args = parser.parse_args(argv)

    config = PipelineConfig(agent_count=args.agents, seed=args.seed)

    clean = run_clean_pipeline(config)
    print(
        f"clean run: {clean.calls} calls, {clean.entries} entries, "
        f"audit_ok={clean.audit_ok}, detections={len(clean.detections)}"
    )
    print()

    header = f"{'id':8} {'layer':12} {'reason':22} {'detected':8} summary"
    print(header)
    print("-" * len(header))
    failures = 0
    for sid, scenario in SCENARIOS.items():
        report = run_attack(config, sid)
        outcome = report.attack
        assert outcome is not None
        ok = outcome.detected and outcome.matched
        failures += 0 if ok else 1
        print(
            f"{sid:8} {scenario.expected_layer:12} "
            f"{scenario.expected_reason:22} {str(ok):8} {scenario.summary}"
        )
    print()
    print(f"detected as documented: {len(SCENARIOS) - failures}/{len(SCENARIOS)}")

    if not args.skip_baselines:
        print()
        matrix = run_baseline_comparison(config)
        width = max(len(name) for name in matrix) + 2
        print(f"{'profile':{width}} " + " ".join(f"{s:7}" for s in E2E_SCENARIO_IDS))
        for name, row in matrix.items():
            marks = " ".join(f"{'x' if row[s] else '.':7}" for s in E2E_SCENARIO_IDS)
            total = sum(row.values())
            print(f"{name:{width}} {marks} {total}/{len(row)}")

    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
