"""Forward solve of the desk channel: flow, concentration and the mass
transfer coefficient, written to ``out/desk_solution.vtk``.

    python demos/simulate_desk.py
"""
from pathlib import Path

from packopt import CaseConfig
from packopt.cases import desk_case
from packopt.io import write_vtk
from packopt.metrics import solve_case

out = Path("out")
mesh = desk_case()
print(f"desk mesh: {mesh.num_cells} cells, {mesh.num_vertices} vertices")

sol = solve_case(mesh, CaseConfig())
m = sol.metrics
print(f"Newton iterations {sol.flow.iterations}, residual {sol.flow.residual_norm:.2e}")
print(f"V_dot = {m.vdot:.5e} m^2/s   A_geo = {m.a_geo:.5e} m")
print(f"c_out = {m.c_out:.4f}   beta = {m.beta:.5e}   dp = {m.dp:.4f} Pa")

write_vtk(out / "desk_solution.vtk", mesh, u=sol.flow.u, p=sol.flow.p, c=sol.concentration.values)
print(f"wrote {out / 'desk_solution.vtk'}")
