"""Measure governance overhead across pipeline scales and print a table.

Runs clean pipelines at each agent count, averages the per-layer costs
over several repetitions, and reports per-agent cost plus ledger storage
so scaling behaviour is visible at a glance.
"""

from __future__ import annotations

import argparse
import sys
from typing import List, Optional

from govkit.harness import scaling_table


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repetitions", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    rows = scaling_table(repetitions=args.repetitions, seed=args.seed)

    header = (
        f"{'agents':>6} {'entries':>8} {'g1 ms':>9} {'g2 ms':>9} "
        f"{'g3 ms':>9} {'total ms':>9} {'per-agent':>10} {'bytes':>8}"
    )
    print(header)
    print("-" * len(header))
    for row in rows:
        print(
            f"{row.agent_count:>6} {row.entries:>8} "
            f"{row.g1_s * 1e3:>9.3f} {row.g2_s * 1e3:>9.3f} "
            f"{row.g3_s * 1e3:>9.3f} {row.governance_s * 1e3:>9.3f} "
            f"{row.per_agent_s * 1e3:>10.3f} {row.storage_bytes:>8}"
        )

    smallest, largest = rows[0], rows[-1]
    ratio = largest.per_agent_s / smallest.per_agent_s
    print()
    print(
        f"per-agent cost ratio {largest.agent_count} vs "
        f"{smallest.agent_count} agents: {ratio:.2f}x"
    )
    print(f"ledger share of governance at {largest.agent_count} agents: "
          f"{largest.g3_share:.0%}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
