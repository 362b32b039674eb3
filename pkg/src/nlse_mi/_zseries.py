"""Exact integrals of s^a e^{nu s} over [0, 1] and a phase-polynomial algebra.

Every z-dependent integrand in this package is a polynomial in s = z/L
times phases e^{i u K s} with one global real unit u and integer K, so
z-integrals reduce to the family I_a(nu) = int_0^1 s^a e^{nu s} ds.

I_a is evaluated by power series for moderate |nu| (unconditionally
convergent, no cancellation blow-up) and by upward recursion for large
|nu| where the recursion is stable.
"""

from __future__ import annotations

import math

import numpy as np

_SERIES_CUTOFF = 34.0
_TINY = 1e-300


def iexp(a: int, nu: complex) -> complex:
    """int_0^1 s^a e^{nu s} ds, exact to double precision."""
    if abs(nu) < 1e-14:
        # residual-phase guard: treat as exactly zero phase
        return 1.0 / (a + 1)
    if abs(nu) <= _SERIES_CUTOFF:
        acc = 0.0 + 0.0j
        term = 1.0 + 0.0j
        k = 0
        while True:
            contrib = term / (a + k + 1)
            acc += contrib
            k += 1
            term *= nu / k
            if abs(term) / (a + k + 1) < 1e-20 * (abs(acc) + _TINY) or k > 400:
                return complex(acc)
    # upward recursion, stable for degrees well below |nu|
    if a > 1.5 * abs(nu):
        raise ValueError(
            f"iexp recursion unstable: degree {a} too large for |nu|={abs(nu):.3g}"
        )
    e = np.exp(nu)
    val = (e - 1.0) / nu
    for k in range(1, a + 1):
        val = (e - k * val) / nu
    return complex(val)


class ZContext:
    """Caches I_a(i u K) for one phase unit u and provides the algebra."""

    def __init__(self, u: float):
        self.u = float(u)
        self._icache: dict[tuple[int, int], complex] = {}
        self._jcache: dict[tuple[int, int], dict] = {}
        self._j1cache: dict[tuple[int, int], complex] = {}

    # -- scalar integrals ------------------------------------------------

    def i_of(self, a: int, k: int) -> complex:
        key = (k, a)
        val = self._icache.get(key)
        if val is None:
            val = iexp(a, 1j * self.u * k) if (k != 0 and self.u != 0.0) \
                else 1.0 / (a + 1)
            self._icache[key] = val
        return val

    def nu_of(self, k: int) -> complex:
        return 1j * self.u * k

    # -- phase polynomials -------------------------------------------------
    #
    # A phase polynomial is a dict {K: coeff array c}, meaning
    # sum_K e^{i u K s} * sum_a c[a] s^a.

    @staticmethod
    def monomial(power: int, coeff: complex = 1.0) -> dict:
        c = np.zeros(power + 1, dtype=np.complex128)
        c[power] = coeff
        return {0: c}

    @staticmethod
    def expo(k: int, coeffs) -> dict:
        return {int(k): np.asarray(coeffs, dtype=np.complex128)}

    @staticmethod
    def add(f: dict, g: dict) -> dict:
        out = {k: v.copy() for k, v in f.items()}
        for k, v in g.items():
            if k in out:
                a, b = out[k], v
                if len(a) < len(b):
                    a, b = b, a
                a = a.copy()
                a[: len(b)] += b
                out[k] = a
            else:
                out[k] = v.copy()
        return out

    @staticmethod
    def scale(f: dict, c: complex) -> dict:
        return {k: v * c for k, v in f.items()}

    @staticmethod
    def mul(f: dict, g: dict) -> dict:
        out: dict = {}
        for kf, cf in f.items():
            for kg, cg in g.items():
                k = kf + kg
                prod = np.convolve(cf, cg)
                if k in out:
                    a, b = out[k], prod
                    if len(a) < len(b):
                        a, b = b, a
                    a = a.copy()
                    a[: len(b)] += b
                    out[k] = a
                else:
                    out[k] = prod
        return out

    @staticmethod
    def mul_s(f: dict, power: int = 1) -> dict:
        """Multiply by s^power."""
        return {k: np.concatenate([np.zeros(power, dtype=np.complex128), v])
                for k, v in f.items()}

    @staticmethod
    def conj(f: dict) -> dict:
        return {-k: np.conj(v) for k, v in f.items()}

    def integrate(self, f: dict) -> complex:
        total = 0.0 + 0.0j
        for k, c in f.items():
            ivec = np.array([self.i_of(a, k) for a in range(len(c))])
            total += np.dot(c, ivec)
        return complex(total)

    def integrate_mul(self, f: dict, g: dict) -> complex:
        """int_0^1 f(s) g(s) ds without forming the product dict."""
        total = 0.0 + 0.0j
        for kf, cf in f.items():
            for kg, cg in g.items():
                conv = np.convolve(cf, cg)
                k = kf + kg
                ivec = np.array([self.i_of(a, k) for a in range(len(conv))])
                total += np.dot(conv, ivec)
        return complex(total)

    # -- antiderivative family J_p(s; m), m = i u K -----------------------

    def jrep(self, p: int, k: int) -> dict:
        """J_p(s) = int_0^s t^p e^{-i u K t} dt as a phase polynomial.

        Small |u K| uses a truncated power series in m (plain polynomial,
        benign coefficients); large |u K| uses the closed exponential form.
        """
        key = (p, k)
        cached = self._jcache.get(key)
        if cached is not None:
            return cached
        m = 1j * self.u * k
        am = abs(m)
        if am < 1e-14:
            rep = self.monomial(p + 1, 1.0 / (p + 1))
        elif am <= 3.0:
            # J_p(s; m) = sum_r (-m)^r s^{p+r+1} / (r! (p+r+1))
            coeffs = [0.0] * (p + 1)
            term = 1.0 + 0.0j
            r = 0
            while True:
                coeffs.append(term / (p + r + 1))
                r += 1
                term *= -m / r
                if abs(term) < 1e-22 and r > 4:
                    break
            rep = {0: np.asarray(coeffs, dtype=np.complex128)}
        else:
            c0 = math.factorial(p) / m ** (p + 1)
            tail = np.empty(p + 1, dtype=np.complex128)
            t = 1.0 + 0.0j
            for r in range(p + 1):
                tail[r] = t
                t *= m / (r + 1)
            rep = {0: np.array([c0], dtype=np.complex128), -k: -c0 * tail}
        self._jcache[key] = rep
        return rep

    def j_at_one(self, p: int, k: int) -> complex:
        """J_p(1; m) = int_0^1 t^p e^{-i u K t} dt."""
        key = (p, k)
        val = self._j1cache.get(key)
        if val is None:
            val = iexp(p, -1j * self.u * k) if (k != 0 and self.u != 0.0) \
                else 1.0 / (p + 1)
            self._j1cache[key] = val
        return val

    def wrep(self, p: int, k: int) -> dict:
        """W_p(s) = int_0^1 G(s,t)/L^2 * t^p e^{-i u K t} dt (unit-interval Green kernel).

        W_p(s) = -J_{p+1}(s) + s J_p(s) + s [J_{p+1}(1) - J_p(1)].
        """
        jp1 = self.jrep(p + 1, k)
        jp = self.jrep(p, k)
        rep = self.scale(jp1, -1.0)
        rep = self.add(rep, self.mul_s(jp))
        c = self.j_at_one(p + 1, k) - self.j_at_one(p, k)
        rep = self.add(rep, self.monomial(1, c))
        return rep

    def wprime_rep(self, p: int, k: int) -> dict:
        """d/ds W_p(s) = J_p(s) + J_{p+1}(1) - J_p(1)."""
        rep = self.jrep(p, k)
        c = self.j_at_one(p + 1, k) - self.j_at_one(p, k)
        return self.add(rep, self.monomial(0, c))


def mu_unit(beta: float, l: float, dw: float) -> float:
    """Global phase unit: mu = i * u * K with u = beta L dw^2 / 4, K integer."""
    return beta * l * dw * dw / 4.0


def mu_integer(m_total: int, j, j3, j1, j2):
    """Integer K with mu = i u K for the quadruple (j, j3, j1, j2).

    K = a_j^2 + a_j3^2 - a_j1^2 - a_j2^2 with a_j = 2 j + 1 - M'; K is even
    for every closed quadruple.
    """
    a = lambda idx: 2 * np.asarray(idx) - (m_total - 1)
    return a(j) ** 2 + a(j3) ** 2 - a(j1) ** 2 - a(j2) ** 2
