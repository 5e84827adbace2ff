"""Bracketed scalar root finding."""

from __future__ import annotations

import math

from scipy.optimize import brentq

from .errors import NumericError


def bracketed_root(f, lo: float, hi: float, xtol: float = 1e-13, what: str = "root",
                   max_bisect: int = 400) -> float:
    """Root of ``f`` on ``[lo, hi]`` given a sign change at the endpoints.

    Infinite function values are allowed (as signed sentinels); plain
    bisection runs until both ends are finite, then Brent's method
    finishes. Raises NumericError with the endpoint values if the bracket
    is invalid.
    """
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if math.isnan(flo) or math.isnan(fhi) or (flo > 0) == (fhi > 0):
        raise NumericError(f"no sign change while bracketing {what}",
                           {"lo": lo, "hi": hi, "f(lo)": flo, "f(hi)": fhi})
    for _ in range(max_bisect):
        if math.isfinite(flo) and math.isfinite(fhi):
            break
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0:
            return mid
        if math.isnan(fm):
            raise NumericError(f"NaN while bracketing {what}", {"x": mid})
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm
        if hi - lo <= xtol:
            return 0.5 * (lo + hi)
    return brentq(f, lo, hi, xtol=xtol, rtol=4 * 2.220446049250313e-16, maxiter=500)
