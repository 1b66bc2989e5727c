"""Numerical checks of the boosting identities.

The stage loss at lambda = 1 has the same parameter gradient as cross
entropy against the pseudo-label y - sigma. This script prints every check
in the battery, then shows what an honest failure looks like by asking for
an impossible tolerance.
"""
from reconboost.verify import run_verify

for r in run_verify():
    print(r.line())

print("\nwith tolerance 1e-15 (finite differences cannot get there):")
for r in run_verify(tolerance=1e-15, only=["fd_ce", "fd_stage", "lambda1_equivalence"]):
    print(r.line())
