"""One discrete step from an annular set: the hole may not close faster than the bound ``r - M h``.

Prints, per ``(r, R, h)``, the distance from the origin to the stepped set,
the larger stationary radius of the radial functional, and the bound.
"""

import argparse

from bernflow.flow import FlowConfig, initial_state, step
from bernflow.grid import Annulus, make_grid, rasterize_shape, signed_distance
from bernflow.radial import non_blowup_constant, stationary_points


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--r0", type=float, default=0.9)
    ap.add_argument("--cells", type=int, default=288)
    ap.add_argument("--half-width", type=float, default=3.6)
    ap.add_argument("triples", nargs="*", default=["1.0,2.2,0.05", "0.95,2.0,0.05", "1.1,2.4,0.075"])
    args = ap.parse_args()

    m = non_blowup_constant(2, args.r0)
    w = args.half_width
    g = make_grid((-w, -w), (w, w), (args.cells, args.cells))
    print(f"M = {m:.4f}  (r0 = {args.r0}, dx = {g.dx:.4f})")
    print(f"{'r':>6} {'R':>6} {'h':>6} {'d':>8} {'rho2':>8} {'r-Mh':>8}")
    for text in args.triples:
        r, big_r, h = map(float, text.split(","))
        source = rasterize_shape(Annulus((0.0, 0.0), big_r, big_r + 0.2), g)
        omega = rasterize_shape(Annulus((0.0, 0.0), r, big_r + 0.3), g)
        fc = FlowConfig(h=h, steps=1)
        nxt = step(initial_state(source, omega, fc), fc)
        d = signed_distance(nxt.omega).at((0.0, 0.0))
        sp = stationary_points(r, big_r, h, 2)
        rho2 = float("nan") if sp.rho2 is None else sp.rho2
        print(f"{r:6.3f} {big_r:6.3f} {h:6.3f} {d:8.4f} {rho2:8.4f} {r - m * h:8.4f}")


if __name__ == "__main__":
    main()
