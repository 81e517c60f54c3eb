"""Two scalar quadratics with opposite linear terms, run with alpha^k = 1 + sqrt(k).

The iterate settles near 125 / (eps sqrt(k)), so the tail contraction ratio tends
to one. Prints |x| by decade, the rate fit and the worst gap between the
closed-form gradient error and the one measured from the cycles.
"""
import argparse

import numpy as np

from inewt import diagnostics, engine, problems, stepsize


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epsilon", type=float, default=1000.0)
    ap.add_argument("--cycles", type=int, default=20000)
    ap.add_argument("--x0", type=float, default=1.0)
    args = ap.parse_args()

    prob = problems.make_example1(args.epsilon)
    cfg = engine.RunConfig(max_cycles=args.cycles, grad_tolerance=1e-300, trace_limit=50, x0=[args.x0])
    res = engine.run(prob, stepsize.PowerSchedule(), cfg)
    x = np.abs(res.starts[:, 0])
    k = 1
    while k <= len(x):
        print(f"k={k:>7d}  |x|={x[k - 1]:.3e}  125/(eps sqrt k)={125 / (args.epsilon * np.sqrt(k)):.3e}")
        k *= 10
    fit = diagnostics.fit_rate(x)
    print(f"rate fit: rho_hat={fit.rho_hat:.6f} ratio_tail={fit.ratio_tail:.6f} -> {fit.classification}")
    gap = max(abs(diagnostics.example1_error_oracle(tr.k, tr.alpha, tr.start[0], args.epsilon) - tr.grad_error[0])
              for tr in res.traces)
    print(f"closed-form gradient error, worst gap over the first {len(res.traces)} cycles: {gap:.2e}")


if __name__ == "__main__":
    main()
