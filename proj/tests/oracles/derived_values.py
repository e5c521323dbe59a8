"""Reference values frozen into the C++ tests.

Computed with exact rationals and mpmath at 60 digits, independently of the
library. Rerun with `python3 tests/oracles/derived_values.py`.
"""
from fractions import Fraction
from math import comb

import mpmath as mp

mp.mp.dps = 60


def frame_precision(frames, failed):
    return Fraction(frames - failed, frames)


def guarantee(p, n, k, batches):
    """P[every one of `batches` draws of Binomial(n, p) is >= k]."""
    p = mp.mpf(p)
    lower = mp.fsum(mp.binomial(n, i) * p**i * (1 - p) ** (n - i) for i in range(k))
    return (1 - lower) ** batches


def solve(target, n, k, batches):
    return mp.findroot(lambda p: guarantee(p, n, k, batches) - target, (0.03, 0.05), solver="bisect")


def exact_tail(p, n, k):
    return sum(comb(n, i) * p**i * (1 - p) ** (n - i) for i in range(k, n + 1))


if __name__ == "__main__":
    counts = {"P1": (186, 3), "P2": (200, 6), "P3": (249, 2)}
    precisions = {pos: frame_precision(*c) for pos, c in counts.items()}
    for pos, value in precisions.items():
        print(f"precision {pos} = {value} = {float(value):.17g}")
    mean = sum(precisions.values()) / 3
    print(f"mean = {mean} = {float(mean):.17g}")
    print(f"P2 quoted as 94% vs 194/200 = {194 / 200}")

    for p, n, k, b in [
        (Fraction(1, 10), 1024, 20, 500),
        (Fraction(1, 20), 1024, 20, 500),
        (Fraction(1, 25), 1024, 20, 500),
        (Fraction(3, 100), 256, 5, 50),
    ]:
        tail = exact_tail(p, n, k)
        value = mp.mpf(tail.numerator) / tail.denominator
        print(f"guarantee p={p} n={n} k={k} B={b}: {mp.nstr(value ** b, 20)}")

    p_star = solve(mp.mpf("0.9695"), 1024, 20, 500)
    print(f"p* for 0.9695 (n=1024, k=20, B=500) = {mp.nstr(p_star, 20)}")
