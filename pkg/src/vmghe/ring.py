"""Exact arithmetic in Z_q[x]/(x^N + 1) held in residue-number-system form.

Every element keeps one limb of N residues per modulus of its context.
Multiplication goes through a negacyclic NTT per limb when the moduli are
NTT-friendly; tiny test contexts with arbitrary coprime moduli fall back to
schoolbook convolution.  Big-integer conversions (CRT) always use the
centered representative and double as the testing oracle.
"""

from __future__ import annotations

import dataclasses
import math
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

# Limb products must fit in int64: residues < 2**31 give products < 2**62.
LIMB_BOUND = 1 << 31


def is_power_of_two(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def round_div(num, den: int):
    """Round ``num / den`` to the nearest integer, ties away from zero.

    Works on Python ints and on object-dtype numpy arrays of Python ints.
    """
    if den == 0:
        raise ZeroDivisionError("rounding with zero denominator")
    if den < 0:
        num, den = -num, -den
    if isinstance(num, np.ndarray):
        mag = (2 * np.abs(num) + den) // (2 * den)
        return np.where(num < 0, -mag, mag)
    mag = (2 * abs(num) + den) // (2 * den)
    return -mag if num < 0 else mag


def center(x, m: int):
    """Centered representative of ``x`` modulo ``m`` in (-m/2, m/2]."""
    r = x % m
    if isinstance(r, np.ndarray):
        return np.where(r > m // 2, r - m, r)
    return r - m if r > m // 2 else r


def _primitive_2n_root(q: int, n: int) -> int:
    for x in range(2, q):
        psi = pow(x, (q - 1) // (2 * n), q)
        if pow(psi, n, q) == q - 1:
            return psi
    raise ValueError(f"no primitive {2 * n}-th root of unity modulo {q}")


class _NttTables:
    """Twiddle tables for all limbs of a context, laid out for vectorized butterflies."""

    def __init__(self, n: int, primes: Sequence[int]):
        self.n = n
        q = np.array(primes, dtype=np.int64)
        self.q = q[:, None]
        self.q3 = q[:, None, None]
        log_n = n.bit_length() - 1
        self.bitrev = np.array(
            [int(format(i, f"0{log_n}b")[::-1], 2) if log_n else 0 for i in range(n)],
            dtype=np.int64,
        )
        psi_pow, psi_inv_pow, fwd, inv = [], [], [], []
        for p in primes:
            psi = _primitive_2n_root(p, n)
            psi_inv = pow(psi, -1, p)
            n_inv = pow(n, -1, p)
            psi_pow.append([pow(psi, i, p) for i in range(n)])
            psi_inv_pow.append([pow(psi_inv, i, p) * n_inv % p for i in range(n)])
            omega, omega_inv = psi * psi % p, psi_inv * psi_inv % p
            fwd.append(self._stage_twiddles(omega, p, n))
            inv.append(self._stage_twiddles(omega_inv, p, n))
        self.psi_pow = np.array(psi_pow, dtype=np.int64)
        self.psi_inv_pow = np.array(psi_inv_pow, dtype=np.int64)
        n_stages = log_n
        self.fwd = [np.array([fwd[j][s] for j in range(len(primes))], dtype=np.int64) for s in range(n_stages)]
        self.inv = [np.array([inv[j][s] for j in range(len(primes))], dtype=np.int64) for s in range(n_stages)]

    @staticmethod
    def _stage_twiddles(omega: int, p: int, n: int) -> list[list[int]]:
        stages = []
        m = 2
        while m <= n:
            w = pow(omega, n // m, p)
            stages.append([pow(w, j, p) for j in range(m // 2)])
            m *= 2
        return stages

    def _butterflies(self, x: np.ndarray, stages: list[np.ndarray]) -> np.ndarray:
        l, n = x.shape
        x = x[:, self.bitrev]
        for w in stages:
            half = w.shape[1]
            m = 2 * half
            x = x.reshape(l, n // m, m)
            even = x[:, :, :half]
            odd = x[:, :, half:] * w[:, None, :] % self.q3
            x = np.concatenate(((even + odd) % self.q3, (even - odd) % self.q3), axis=2)
        return x.reshape(l, n)

    def forward(self, a: np.ndarray) -> np.ndarray:
        return self._butterflies(a * self.psi_pow % self.q, self.fwd)

    def inverse(self, a: np.ndarray) -> np.ndarray:
        return self._butterflies(a, self.inv) * self.psi_inv_pow % self.q


@dataclasses.dataclass(frozen=True)
class RnsContext:
    """The ring R_q in residue form.

    ``partition`` holds the digit boundaries 0 = j_0 < ... < j_k = l over the
    prime list; digit i covers primes[j_i:j_{i+1}] and has modulus Q_i.
    """

    N: int
    primes: tuple[int, ...]
    partition: tuple[int, ...]
    ntt: bool = True
    digit_moduli: tuple[int, ...] = dataclasses.field(init=False, compare=False, repr=False)
    modulus: int = dataclasses.field(init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "digit_moduli", tuple(
            math.prod(self.primes[a:b]) for a, b in zip(self.partition, self.partition[1:])
        ))
        object.__setattr__(self, "modulus", math.prod(self.primes))
        q = np.array(self.primes, dtype=np.int64)
        object.__setattr__(self, "_q", q[:, None])
        object.__setattr__(self, "_tables", _NttTables(self.N, self.primes) if self.ntt else None)
        # CRT reconstruction constants
        cof = [self.modulus // p for p in self.primes]
        object.__setattr__(self, "_crt_cofactors", cof)
        object.__setattr__(self, "_crt_inverses", np.array(
            [pow(c % p, -1, p) for c, p in zip(cof, self.primes)], dtype=np.int64)[:, None])

    @property
    def l(self) -> int:
        return len(self.primes)

    @property
    def k(self) -> int:
        return len(self.partition) - 1

    def compatible(self, other: "RnsContext") -> bool:
        return self is other or (self.N == other.N and self.primes == other.primes)

    def residues(self, value: int) -> np.ndarray:
        """Residues of an integer constant, one per limb, as a column."""
        return np.array([value % p for p in self.primes], dtype=np.int64)[:, None]


def make_context(N: int, primes: Sequence[int], partition: Sequence[int] | None = None,
                 *, require_ntt: bool = True) -> RnsContext:
    """Build an :class:`RnsContext`, validating the modulus chain.

    With ``require_ntt=False`` the moduli only need to be pairwise coprime
    (used for hand-sized examples); multiplication then uses schoolbook
    convolution.
    """
    primes = tuple(int(p) for p in primes)
    if not is_power_of_two(N):
        raise ValueError(f"ring degree {N} is not a power of two")
    if not primes:
        raise ValueError("empty modulus chain")
    for p in primes:
        if p < 2:
            raise ValueError(f"invalid modulus {p}")
        if p >= LIMB_BOUND:
            raise ValueError(f"modulus {p} exceeds the 31-bit limb bound")
        if require_ntt and p % (2 * N) != 1:
            raise ValueError(f"modulus {p} is not NTT-friendly for N={N} (needs p = 1 mod {2 * N})")
    for i, p in enumerate(primes):
        for p2 in primes[i + 1:]:
            if math.gcd(p, p2) != 1:
                raise ValueError(f"moduli {p} and {p2} are not coprime")
    if partition is None:
        partition = tuple(range(len(primes) + 1))
    partition = tuple(int(j) for j in partition)
    if (len(partition) < 2 or partition[0] != 0 or partition[-1] != len(primes)
            or any(a >= b for a, b in zip(partition, partition[1:]))):
        raise ValueError(f"malformed digit partition {partition} for {len(primes)} moduli")
    return RnsContext(N, primes, partition, ntt=require_ntt)


class RingElement:
    """Element of R_q as an (l, N) array of canonical residues.

    Either the coefficient or the NTT representation may be materialized;
    the other is computed on demand and cached.  Instances are treated as
    immutable values.
    """

    __slots__ = ("ctx", "_coeffs", "_ntt")

    def __init__(self, ctx: RnsContext, coeffs: np.ndarray | None = None, *, ntt: np.ndarray | None = None):
        if coeffs is None and ntt is None:
            raise ValueError("need coefficients or NTT values")
        self.ctx = ctx
        self._coeffs = coeffs
        self._ntt = ntt

    # -- constructors ---------------------------------------------------
    @classmethod
    def zero(cls, ctx: RnsContext) -> "RingElement":
        return cls(ctx, np.zeros((ctx.l, ctx.N), dtype=np.int64))

    @classmethod
    def constant(cls, ctx: RnsContext, value: int) -> "RingElement":
        c = np.zeros((ctx.l, ctx.N), dtype=np.int64)
        c[:, 0] = ctx.residues(value)[:, 0]
        return cls(ctx, c)

    @classmethod
    def from_ints(cls, ctx: RnsContext, values: Iterable[int]) -> "RingElement":
        return from_bigint(values, ctx)

    # -- representations ------------------------------------------------
    @property
    def limbs(self) -> np.ndarray:
        if self._coeffs is None:
            self._coeffs = self.ctx._tables.inverse(self._ntt)
        return self._coeffs

    def ntt_values(self) -> np.ndarray:
        if self._ntt is None:
            self._ntt = self.ctx._tables.forward(self._coeffs)
        return self._ntt

    # -- arithmetic -----------------------------------------------------
    def _check(self, other: "RingElement"):
        if not self.ctx.compatible(other.ctx):
            raise ValueError("ring elements belong to different contexts")

    def __add__(self, other: "RingElement") -> "RingElement":
        self._check(other)
        q = self.ctx._q
        if self._coeffs is None and other._coeffs is None:
            return RingElement(self.ctx, ntt=(self._ntt + other._ntt) % q)
        return RingElement(self.ctx, (self.limbs + other.limbs) % q)

    def __sub__(self, other: "RingElement") -> "RingElement":
        self._check(other)
        q = self.ctx._q
        if self._coeffs is None and other._coeffs is None:
            return RingElement(self.ctx, ntt=(self._ntt - other._ntt) % q)
        return RingElement(self.ctx, (self.limbs - other.limbs) % q)

    def __neg__(self) -> "RingElement":
        if self._coeffs is None:
            return RingElement(self.ctx, ntt=(-self._ntt) % self.ctx._q)
        return RingElement(self.ctx, (-self.limbs) % self.ctx._q)

    def __mul__(self, other) -> "RingElement":
        if isinstance(other, (int, np.integer)):
            return self.scale(int(other))
        if not isinstance(other, RingElement):
            return NotImplemented
        self._check(other)
        ctx = self.ctx
        if ctx.ntt:
            return RingElement(ctx, ntt=self.ntt_values() * other.ntt_values() % ctx._q)
        return RingElement(ctx, _schoolbook(self.limbs, other.limbs, ctx.primes))

    __rmul__ = __mul__

    def scale(self, c: int) -> "RingElement":
        r = self.ctx.residues(c)
        if self._coeffs is None:
            return RingElement(self.ctx, ntt=self._ntt * r % self.ctx._q)
        return RingElement(self.ctx, self.limbs * r % self.ctx._q)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RingElement):
            return NotImplemented
        return self.ctx.compatible(other.ctx) and np.array_equal(self.limbs, other.limbs)

    __hash__ = None

    def __repr__(self) -> str:
        return f"RingElement(N={self.ctx.N}, l={self.ctx.l})"

    def is_zero(self) -> bool:
        return not self.limbs.any()

    # -- serialization --------------------------------------------------
    def to_bytes(self) -> bytes:
        """Limb-major, little-endian 64-bit residues."""
        return self.limbs.astype("<u8").tobytes()

    @classmethod
    def from_bytes(cls, ctx: RnsContext, data: bytes) -> "RingElement":
        arr = np.frombuffer(data, dtype="<u8")
        if arr.size != ctx.l * ctx.N:
            raise ValueError("serialized element does not match the context shape")
        limbs = arr.astype(np.int64).reshape(ctx.l, ctx.N)
        if (limbs >= ctx._q).any():
            raise ValueError("non-canonical residue in serialized element")
        return cls(ctx, limbs)


def _schoolbook(a: np.ndarray, b: np.ndarray, primes: Sequence[int]) -> np.ndarray:
    out = np.empty_like(a)
    for j, p in enumerate(primes):
        out[j] = negacyclic_schoolbook([int(x) for x in a[j]], [int(x) for x in b[j]], p)
    return out


def negacyclic_schoolbook(a: Sequence[int], b: Sequence[int], modulus: int | None = None) -> list[int]:
    """Plain O(N^2) product in Z[x]/(x^N + 1); reduced mod ``modulus`` if given."""
    n = len(a)
    out = [0] * n
    for i, ai in enumerate(a):
        if not ai:
            continue
        for j, bj in enumerate(b):
            k = i + j
            if k < n:
                out[k] += ai * bj
            else:
                out[k - n] -= ai * bj
    if modulus is not None:
        out = [x % modulus for x in out]
    return out


def ring_add(a: RingElement, b: RingElement) -> RingElement:
    return a + b


def ring_mul(a: RingElement, b: RingElement) -> RingElement:
    return a * b


def inner_product(xs: Sequence[RingElement], ys: Sequence[RingElement]) -> RingElement:
    """sum_i xs[i] * ys[i], accumulated in the NTT domain."""
    if len(xs) != len(ys):
        raise ValueError(f"length mismatch in inner product: {len(xs)} vs {len(ys)}")
    if not xs:
        raise ValueError("empty inner product")
    ctx = xs[0].ctx
    if not ctx.ntt:
        acc = xs[0] * ys[0]
        for x, y in zip(xs[1:], ys[1:]):
            acc = acc + x * y
        return acc
    q = ctx._q
    acc = np.zeros((ctx.l, ctx.N), dtype=np.int64)
    for x, y in zip(xs, ys):
        x._check(y)
        acc = (acc + x.ntt_values() * y.ntt_values() % q) % q
    return RingElement(ctx, ntt=acc)


def hadamard(xs: Sequence[RingElement], ys: Sequence[RingElement]) -> list[RingElement]:
    if len(xs) != len(ys):
        raise ValueError(f"length mismatch in component-wise product: {len(xs)} vs {len(ys)}")
    return [x * y for x, y in zip(xs, ys)]


# -- big-integer path ------------------------------------------------------

def _crt(a: RingElement) -> np.ndarray:
    ctx = a.ctx
    y = a.limbs * ctx._crt_inverses % ctx._q
    acc = np.zeros(ctx.N, dtype=object)
    for j, cof in enumerate(ctx._crt_cofactors):
        acc = acc + y[j].astype(object) * cof
    return acc % ctx.modulus


def to_bigint(a: RingElement) -> list[int]:
    """Centered integer coefficients in (-q/2, q/2]."""
    return [int(x) for x in center(_crt(a), a.ctx.modulus)]


def _to_bigint_array(a: RingElement) -> np.ndarray:
    return center(_crt(a), a.ctx.modulus)


def from_bigint(values: Iterable[int], ctx: RnsContext) -> RingElement:
    arr = np.array([int(v) for v in values], dtype=object)
    if arr.shape != (ctx.N,):
        raise ValueError(f"expected {ctx.N} coefficients, got {arr.shape}")
    return _from_object_array(arr, ctx)


def _from_object_array(arr: np.ndarray, ctx: RnsContext) -> RingElement:
    limbs = np.empty((ctx.l, ctx.N), dtype=np.int64)
    for j, p in enumerate(ctx.primes):
        limbs[j] = (arr % p).astype(np.int64)
    return RingElement(ctx, limbs)


def lift(a: RingElement, target: RnsContext) -> RingElement:
    """Move the centered representative of ``a`` into another modulus chain."""
    return _from_object_array(_to_bigint_array(a), target)


def rescale_round(a: RingElement, num: int, den: int, target: RnsContext | None = None) -> RingElement:
    """round(num/den * lift(a)) reduced into ``target`` (ties away from zero)."""
    if den == 0:
        raise ZeroDivisionError("rescale with zero denominator")
    x = _to_bigint_array(a)
    return _from_object_array(round_div(x * num, den), target or a.ctx)


def infinity_norm(a: RingElement) -> int:
    """Largest absolute centered coefficient."""
    return int(max(abs(int(x)) for x in _to_bigint_array(a)))


# -- sampling --------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class SamplerParams:
    """Distribution parameters.

    ``sigma``/``smudge_sigma`` are standard deviations of the discrete
    Gaussians, truncated at ``tail`` standard deviations.  A value of 0
    yields the zero polynomial (noiseless, for tests only).
    """

    sigma: float = 3.2
    smudge_sigma: float = 204.8
    ternary_zero: float = 1 / 3
    tail: float = 6.0

    def __post_init__(self):
        if self.sigma < 0 or self.smudge_sigma < 0:
            raise ValueError("Gaussian parameters must be non-negative")
        if not 0 <= self.ternary_zero < 1:
            raise ValueError("ternary zero probability must lie in [0, 1)")
        if self.tail <= 0:
            raise ValueError("tail cut must be positive")

    def error_bound(self, smudge: bool = False) -> int:
        s = self.smudge_sigma if smudge else self.sigma
        return int(math.floor(self.tail * s))


@lru_cache(maxsize=None)
def _gaussian_table(sigma: float, tail: float) -> tuple[np.ndarray, np.ndarray]:
    bound = int(math.floor(tail * sigma))
    support = np.arange(-bound, bound + 1, dtype=np.int64)
    w = np.exp(-(support.astype(float) ** 2) / (2 * sigma * sigma))
    return support, w / w.sum()


class Sampler:
    """Seeded sampler for secrets, errors and uniform ring elements.

    Holds a stateful RNG, so one instance belongs to one party.
    """

    KINDS = ("secret", "error", "smudge", "uniform")

    def __init__(self, params: SamplerParams, seed=None):
        self.params = params
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def _small(self, ctx: RnsContext, coeffs: np.ndarray) -> RingElement:
        return RingElement(ctx, coeffs[None, :] % ctx._q)

    def ternary_coeffs(self, n: int) -> np.ndarray:
        z = self.params.ternary_zero
        return self.rng.choice(np.array([-1, 0, 1], dtype=np.int64), size=n, p=[(1 - z) / 2, z, (1 - z) / 2])

    def gaussian_coeffs(self, n: int, sigma: float) -> np.ndarray:
        if sigma == 0:
            return np.zeros(n, dtype=np.int64)
        support, prob = _gaussian_table(float(sigma), self.params.tail)
        return self.rng.choice(support, size=n, p=prob)

    def secret(self, ctx: RnsContext) -> RingElement:
        return self._small(ctx, self.ternary_coeffs(ctx.N))

    def error(self, ctx: RnsContext) -> RingElement:
        return self._small(ctx, self.gaussian_coeffs(ctx.N, self.params.sigma))

    def smudge(self, ctx: RnsContext) -> RingElement:
        return self._small(ctx, self.gaussian_coeffs(ctx.N, self.params.smudge_sigma))

    def uniform(self, ctx: RnsContext) -> RingElement:
        limbs = np.stack([self.rng.integers(0, p, size=ctx.N, dtype=np.int64) for p in ctx.primes])
        return RingElement(ctx, limbs)

    def sample(self, ctx: RnsContext, kind: str) -> RingElement:
        if kind not in self.KINDS:
            raise ValueError(f"unknown sample kind {kind!r}")
        return getattr(self, kind)(ctx)

    def vector(self, ctx: RnsContext, kind: str, length: int) -> tuple[RingElement, ...]:
        return tuple(self.sample(ctx, kind) for _ in range(length))
