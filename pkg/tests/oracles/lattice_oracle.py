"""Brute-force reference for the hexagonal lattice SINR.

Direct double sum over |m|, |n| <= 5000 with no tail handling. Independent of
the package; writes tests/data/lattice_oracle.json.
"""

import json
import math
import sys
from pathlib import Path

import numpy as np

M = 5000
ALPHAS = (3.0, 3.4, 3.5, 4.0, 6.0)
SPACINGS = (0.5, 0.75, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 6.0, 8.0)


def direct_sum(rp, alpha, M=M):
    s3 = math.sqrt(3.0)
    m = np.arange(-M, M + 1, dtype=float)
    total = 0.0
    for n in range(-M, M + 1):
        x = m * s3 * rp + n * s3 * rp / 2.0 - 1.0
        y = 1.5 * n * rp
        q = x * x + y * y
        if n == 0:
            q = q[m != 0]
        total += math.fsum(q ** (-alpha / 2.0))
    return total


def main(out):
    rows = []
    for a in ALPHAS:
        for r in SPACINGS:
            s = direct_sum(r, a)
            rows.append(dict(alpha=a, rg_over_d=r, F=1.0 / s))
            print(a, r, 1.0 / s, flush=True)
    Path(out).write_text(json.dumps(dict(M=M, rows=rows), indent=1))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parents[1] / "data" / "lattice_oracle.json")
