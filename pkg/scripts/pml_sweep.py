"""Sweep CPML thickness and grading on the default scene and print r_db_max per setting."""

import argparse
import itertools

from ddfabc.harness import Scheme, reference_run, reflection_error, run_scheme
from ddfabc.pml import PmlParams
from ddfabc.scene import SimConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--thickness", type=int, nargs="+", default=[4, 6, 10, 16, 24])
    ap.add_argument("--m", type=float, nargs="+", default=[4.0])
    ap.add_argument("--ratio", type=float, nargs="+", default=[1.0])
    ap.add_argument("--kappa", type=float, nargs="+", default=[1.0])
    ap.add_argument("--steps", type=int, default=None)
    args = ap.parse_args()

    sim = SimConfig() if args.steps is None else SimConfig(n_steps=args.steps)
    ref = reference_run(sim).trace()
    pec = reflection_error(run_scheme(sim, Scheme("pec"))[0].trace(), ref).r_db_max
    print(f"pec: {pec:8.2f} dB")
    print("thickness      m  ratio  kappa   r_db_max")
    for L, m, ratio, kappa in itertools.product(args.thickness, args.m, args.ratio, args.kappa):
        p = PmlParams(thickness=L, m=m, sigma_max_ratio=ratio, kappa_max=kappa)
        rec, _ = run_scheme(sim, Scheme("cpml", p))
        print(f"{L:9d} {m:6.1f} {ratio:6.2f} {kappa:6.1f} {reflection_error(rec.trace(), ref).r_db_max:10.2f}")


if __name__ == "__main__":
    main()
