"""Truncation error of the Magnus series against direct integration, one period.

Prints ‖ψ_exact − exp(−iΣM_j)ψ₀‖ for orders 1..3 and the observed power of k,
which should be order + 1.
"""

import math

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp

from optoprep.driving import PERIOD, ProtocolParams, schedule_squeeze
from optoprep.magnus import CompositeLadder, interaction_terms, magnus_quadrature

DIMS = (5, 14)
ETA, N = 2.0, 3
KS = (0.04, 0.02, 0.01, 0.005)


def error(k, order):
    p = ProtocolParams(k, ETA, N, 2)
    s = schedule_squeeze(N)
    L = CompositeLadder(DIMS, margin=3)
    ops, coeffs = interaction_terms(p, s, L)
    ops = [L.crop(o).toarray() for o in ops]
    v = np.zeros(ops[0].shape[0], complex)
    v[0] = 1
    exact = solve_ivp(lambda t, y: -1j * sum(g * o for g, o in zip(coeffs(np.array(t)), ops)) @ y,
                      (0, PERIOD), v, method="DOP853", rtol=1e-13, atol=1e-15).y[:, -1]
    M = sum(t.operator.toarray() for t in magnus_quadrature(p, s, DIMS, order=order, t_span=(0, PERIOD)))
    return float(np.linalg.norm(exact - sla.expm(-1j * M) @ v))


if __name__ == "__main__":
    print("order " + " ".join(f"k={k:<10g}" for k in KS) + "  slopes")
    for order in (1, 2, 3):
        e = [error(k, order) for k in KS]
        slopes = [math.log(e[i] / e[i + 1]) / math.log(KS[i] / KS[i + 1]) for i in range(len(KS) - 1)]
        print(f"{order:5d} " + " ".join(f"{x:<12.3e}" for x in e) + "  " + " ".join(f"{s:.2f}" for s in slopes))
