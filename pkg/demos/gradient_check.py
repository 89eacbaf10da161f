"""Compare the adjoint shape derivative with central finite differences
along random admissible displacements of the desk mesh.

    python demos/gradient_check.py [directions]
"""
import sys

from packopt import CaseConfig
from packopt.cases import desk_case
from packopt.shapeopt import gradcheck

n = int(sys.argv[1]) if len(sys.argv) > 1 else 3
rows = gradcheck(desk_case(), CaseConfig(), directions=n)
print(f"{'dir':>3} {'eps':>8} {'finite diff':>14} {'adjoint':>14} {'rel err':>9}")
for r in rows:
    print(f"{r.direction:3d} {r.eps:8.0e} {r.fd:14.6e} {r.adjoint:14.6e} {r.rel_error:9.1e}")
print(f"worst relative error {max(r.rel_error for r in rows):.2e}")
