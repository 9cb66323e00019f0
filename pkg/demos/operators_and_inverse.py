"""Tour of the sequence-operator layer.

Builds a few causal operators, composes them, and shows the recursive
feedback inverse: given b = a - H(b) with H strictly causal, the inverse
recovers b from a one step at a time, no equation solver involved.

Run:  python demos/operators_and_inverse.py
"""
import numpy as np

from ici.seqops import (LinearStateSpace, UnitDelay, feedback_inverse,
                        lp_norm, series)


def main():
    rng = np.random.default_rng(0)

    print("-- a strictly causal linear system --")
    a = np.array([[0.6, 0.2], [0.0, 0.5]])
    b = np.array([[1.0], [0.5]])
    c = np.array([[1.0, -1.0]])
    sys1 = LinearStateSpace(a, b, c)
    u = rng.standard_normal((8, 1))
    y = sys1.run(u)
    print("input ", np.round(u[:4, 0], 3))
    print("output", np.round(y[:4, 0], 3))
    print("output at t=0 is always 0: strictly causal means y_t depends")
    print("only on u_0..u_{t-1}.")

    print()
    print("-- composition keeps strict causality --")
    chain = series(UnitDelay(1), sys1.clone())
    y2 = chain.run(u)
    print("delay then system, first three outputs:", np.round(y2[:3, 0], 4))

    print()
    print("-- recursive feedback inverse --")
    # b solves b = a - H(b); the inverse operator produces b causally
    h = LinearStateSpace(0.5 * a, b, 0.4 * c)
    target = rng.standard_normal((50, 1))
    inv = feedback_inverse(h.clone())
    solved = inv.run(target)
    residual = solved + h.clone().run(solved) - target
    print(f"loop-equation residual |b + H(b) - a| = {lp_norm(residual):.2e}")
    print("(readout-then-advance: each step reads the accumulated response,")
    print(" subtracts it, then feeds the corrected sample back in)")


if __name__ == "__main__":
    main()
