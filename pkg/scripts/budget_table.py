"""Print the divergence bound for a range of replay trial counts.

For each n the table shows epsilon_bound(n, alpha): the tightest
divergence rate that n passed replay trials can rule out at confidence
1 - alpha. The inverse direction is shown as well: the trial budget
needed to certify a target bound.
"""

from __future__ import annotations

import argparse
import sys
from typing import List, Optional

from govkit.repro import epsilon_bound, required_budget

DEFAULT_TRIALS = (10, 25, 50, 100, 200, 500)


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--alpha", type=float, default=0.01)
    parser.add_argument(
        "--n",
        type=int,
        nargs="*",
        default=list(DEFAULT_TRIALS),
        help="trial counts to tabulate",
    )
    parser.add_argument(
        "--epsilon",
        type=float,
        nargs="*",
        default=[0.1, 0.05, 0.01],
        help="target bounds for the inverse table",
    )
    args = parser.parse_args(argv)

    print(f"alpha = {args.alpha}")
    print(f"{'n':>6} {'epsilon':>10}")
    for n in args.n:
        print(f"{n:>6} {epsilon_bound(n, args.alpha):>10.4f}")

    print()
    print(f"{'target':>8} {'trials':>8} {'achieved':>10}")
    for eps in args.epsilon:
        n = required_budget(eps, args.alpha)
        print(f"{eps:>8.3f} {n:>8} {epsilon_bound(n, args.alpha):>10.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
