"""Print the cubic basis on a 2-interval grid and show the local-support property."""
import numpy as np

from kanrec.spline import basis_values, make_grid, spline_eval

g = make_grid(-1, 1, G=2, k=3)
print("knots:", g.knots)
xs = np.linspace(-1, 1, 9)
B = basis_values(g, xs)
print("   x   " + "  ".join(f"B{j}" .rjust(6) for j in range(g.n_basis)) + "     sum")
for x, row in zip(xs, B):
    print(f"{x:5.2f}  " + "  ".join(f"{v:6.3f}" for v in row) + f"  {row.sum():6.3f}")

# changing one coefficient only moves the curve inside that basis' support
c = np.zeros(g.n_basis)
bumped = c.copy()
bumped[0] = 1.0
moved = [x for x in xs if spline_eval(g, bumped, x) != spline_eval(g, c, x)]
print("c_0 affects x in", moved, "(binary inputs 0 and 1 are outside)")
