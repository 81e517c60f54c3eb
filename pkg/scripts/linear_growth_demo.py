"""Linear-growth stepsize on well-conditioned zero-residual problems.

eta and kappa come from the theory module; the accepted normalized stepsize
should settle at nu*kappa and the gradient norm should decay geometrically.
"""
import argparse

import numpy as np

from inewt import diagnostics, engine, problems, stepsize, theory


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--n", type=int, default=3)
    ap.add_argument("--nu", type=float, default=0.5)
    ap.add_argument("--margin", type=float, default=0.1)
    args = ap.parse_args()

    print("seed      Q     eta_hat   nu*kappa   gamma_tail   rho_hat  class")
    for seed in range(args.seeds):
        prob = problems.make_zero_residual_problem(seed, args.n, 2, nonquadratic=True,
                                                   condition_target=1.05, logcosh_weight=0.05)
        consts = theory.ProblemConstants.from_problem(prob)
        eta, kap = theory.linear_growth_parameters(consts, args.nu, args.margin)
        rule = stepsize.LinearGrowth(eta, args.nu, kap)
        x0 = prob.known_minimizer + 5.0
        res = engine.run(prob, rule, engine.RunConfig(max_cycles=5000, x0=x0))
        fit = diagnostics.fit_rate(res.series("grad_norm"))
        gamma_tail = float(np.median(res.series("gamma")[-10:]))
        print(f"{seed:>4d} {consts.Q:7.4f} {eta:10.6f} {args.nu * kap:10.6f} {gamma_tail:12.6f} "
              f"{fit.rho_hat:9.5f}  {fit.classification}")


if __name__ == "__main__":
    main()
