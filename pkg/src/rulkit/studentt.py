"""Student's t distribution: CDF and quantile.

The CDF reduces to the regularized incomplete beta function, evaluated with
the classic continued-fraction expansion (modified Lentz iteration). The
quantile inverts the CDF numerically with Newton steps safeguarded by
bisection, which converges for every df >= 1 and 0 < p < 1 to well below the
1e-6 absolute tolerance the reports need.
"""

from __future__ import annotations

import math

_MAX_CF_ITER = 300
_CF_EPS = 1e-15
_TINY = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta integral at (a, b, x)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_CF_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction failed to converge "
                          f"for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), the regularized incomplete beta function on [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValueError(f"beta parameters must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    # Use the expansion that converges fastest on each side of the mean.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, df: int) -> float:
    """P(T <= t) for T ~ Student's t with ``df`` degrees of freedom."""
    if df < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {df}")
    if t == 0.0:
        return 0.5
    tail = 0.5 * regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t * t))
    return 1.0 - tail if t > 0 else tail


def student_t_pdf(t: float, df: int) -> float:
    ln = (math.lgamma(0.5 * (df + 1)) - math.lgamma(0.5 * df)
          - 0.5 * math.log(df * math.pi)
          - 0.5 * (df + 1) * math.log1p(t * t / df))
    return math.exp(ln)


def student_t_quantile(p: float, df: int) -> float:
    """Inverse CDF of Student's t, accurate to well under 1e-6 absolute.

    Brackets the root, then runs Newton iterations on ``cdf(t) - p`` with a
    bisection fallback whenever a Newton step leaves the bracket.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie strictly in (0, 1), got {p}")
    if df < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {df}")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -student_t_quantile(1.0 - p, df)

    lo, hi = 0.0, 1.0
    while student_t_cdf(hi, df) < p:
        lo = hi
        hi *= 2.0
        if hi > 1e300:
            raise ArithmeticError(f"failed to bracket t quantile for p={p}, df={df}")

    t = 0.5 * (lo + hi)
    for _ in range(200):
        err = student_t_cdf(t, df) - p
        if err > 0:
            hi = t
        else:
            lo = t
        pdf = student_t_pdf(t, df)
        step = err / pdf if pdf > 0 else 0.0
        nxt = t - step
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - t) < 1e-12 * (1.0 + abs(nxt)):
            return nxt
        t = nxt
    return t
