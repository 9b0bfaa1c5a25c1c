"""Governance toolkit for multi-agent systems.

Three enforcement surfaces, one package:

- capability integrity: capability-bound certificates with monotone trust
  constraints, verified by a four-phase access check (govkit.certificates,
  govkit.verifier);
- behavioral verifiability: replay verification with similarity metrics,
  calibrated thresholds, and divergence budgets (govkit.similarity,
  govkit.repro);
- interaction auditability: a bilaterally signed, hash-chained interaction
  ledger with tamper localization and forensic reconstruction
  (govkit.ledger).

govkit.harness wires the three into a simulated multi-agent pipeline
with attack injection; govkit.cli exposes the operator command surface.
"""

__version__ = "0.1.0"
