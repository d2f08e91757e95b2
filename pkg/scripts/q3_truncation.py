"""Mirror-truncation convergence of the cubic-protocol state.

Prints ⟨n⟩, the top-decile population and the Fock-route non-classicality of
V_m^(3)|0> for a ladder of mirror dimensions (default: the fig2 parameters).
"""

import argparse

from optoprep.analysis import nonclassicality
from optoprep.driving import ProtocolParams
from optoprep.experiments import cubic_state
from optoprep.fockspace import expectation, number, top_level_population


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=float, default=1 / 60)
    ap.add_argument("--eta", type=float, default=20.0)
    ap.add_argument("--N", type=int, default=20)
    ap.add_argument("--q-linear", type=float, default=1.5)
    ap.add_argument("--dims", type=int, nargs="+", default=[60, 120, 240, 480, 960])
    args = ap.parse_args(argv)
    p = ProtocolParams(args.k, args.eta, args.N, 2)
    print(f"{'dim':>6} {'<n>':>10} {'top pop':>10} {'I':>10}")
    for d in args.dims:
        st = cubic_state(p, d, args.q_linear)
        n = expectation(st, number(d)).real
        print(f"{d:6d} {n:10.5f} {top_level_population(st):10.2e} {nonclassicality(st, method='fock').value:10.5f}")


if __name__ == "__main__":
    main()
