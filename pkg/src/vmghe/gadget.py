"""Gadget vectors and homomorphic digit decomposition over an RNS base."""

from __future__ import annotations

import dataclasses
import math
from typing import Sequence

import numpy as np

from .ring import (
    LIMB_BOUND,
    RingElement,
    RnsContext,
    _crt,
    _from_object_array,
    hadamard,
    inner_product,
)

FLAVORS = ("binary", "digit", "prime")

# Distance from a rounding boundary below which the float path is not trusted.
_FLOAT_GUARD = 1e-9


@dataclasses.dataclass(frozen=True)
class GadgetVector:
    ctx: RnsContext
    flavor: str
    components: tuple[int, ...]
    partition: tuple[int, ...] = ()

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def digit_moduli(self) -> tuple[int, ...]:
        p = self.ctx.primes
        return tuple(math.prod(p[a:b]) for a, b in zip(self.partition, self.partition[1:]))

    def elements(self, target: RnsContext | None = None) -> tuple[RingElement, ...]:
        ctx = target or self.ctx
        return tuple(RingElement.constant(ctx, g) for g in self.components)


@dataclasses.dataclass(frozen=True)
class DecomposedElement:
    """Small-norm parts u_0..u_{k-1}, stored modulo the working chain of ``parts``."""

    parts: tuple[RingElement, ...]
    source_modulus: int

    def __len__(self) -> int:
        return len(self.parts)

    def __iter__(self):
        return iter(self.parts)

    def __getitem__(self, i: int) -> RingElement:
        return self.parts[i]

    def __add__(self, other: "DecomposedElement") -> "DecomposedElement":
        self._check(other)
        return DecomposedElement(tuple(a + b for a, b in zip(self.parts, other.parts)), self.source_modulus)

    def __mul__(self, other: "DecomposedElement") -> "DecomposedElement":
        """Component-wise ring product."""
        self._check(other)
        return DecomposedElement(tuple(hadamard(self.parts, other.parts)), self.source_modulus)

    def _check(self, other: "DecomposedElement"):
        if len(self) != len(other) or self.source_modulus != other.source_modulus:
            raise ValueError("decompositions are over different gadgets")


def build_gadget(ctx: RnsContext, flavor: str = "digit") -> GadgetVector:
    """Gadget vector for ``ctx``.

    ``digit`` uses the context's partition, ``prime`` one digit per modulus,
    ``binary`` the powers of two up to the bit length of q.
    """
    if flavor not in FLAVORS:
        raise ValueError(f"unknown gadget flavor {flavor!r}")
    q = ctx.modulus
    if flavor == "binary":
        return GadgetVector(ctx, flavor, tuple(1 << i for i in range(max(1, (q - 1).bit_length()))))
    partition = ctx.partition if flavor == "digit" else tuple(range(ctx.l + 1))
    moduli = [math.prod(ctx.primes[a:b]) for a, b in zip(partition, partition[1:])]
    comps = []
    for i, Qi in enumerate(moduli):
        cof = q // Qi
        if math.gcd(cof, Qi) != 1:
            raise ArithmeticError(f"cofactor of digit {i} is not invertible")
        comps.append(pow(cof % Qi, -1, Qi) * cof)
    return GadgetVector(ctx, flavor, tuple(comps), partition)


def _digit_into(a: RingElement, g: GadgetVector, i: int, p: int) -> np.ndarray:
    """[[a]_{Q_i}]_p from the RNS limbs of ``a`` via fast base conversion.

    The centered digit is sum_j y_j * (Q_i/q_j) - Q_i * round(sum_j y_j / q_j)
    with y_j = [a_j * (Q_i/q_j)^{-1}]_{q_j}.
    """
    lo, hi = g.partition[i], g.partition[i + 1]
    primes = g.ctx.primes[lo:hi]
    Qi = math.prod(primes)
    ys = []
    frac = np.zeros(a.ctx.N)
    for j, qj in zip(range(lo, hi), primes):
        inv = pow((Qi // qj) % qj, -1, qj)
        y = a.limbs[j] * inv % qj
        ys.append(y)
        frac += y / qj
    v = np.floor(frac + 0.5).astype(np.int64)
    near_tie = np.abs(frac - np.floor(frac) - 0.5) < _FLOAT_GUARD
    if near_tie.any():
        for idx in np.nonzero(near_tie)[0]:
            total = sum(int(y[idx]) * (Qi // qj) for y, qj in zip(ys, primes))
            v[idx] = (2 * total + Qi) // (2 * Qi)
    if p < LIMB_BOUND:
        acc = np.zeros(a.ctx.N, dtype=np.int64)
        for y, qj in zip(ys, primes):
            acc = (acc + y % p * ((Qi // qj) % p)) % p
        return (acc - v * (Qi % p)) % p
    acc = np.zeros(a.ctx.N, dtype=object)
    for y, qj in zip(ys, primes):
        acc = acc + y.astype(object) * (Qi // qj)
    return (acc - v.astype(object) * Qi) % p


def decompose_foreign(a: RingElement, g: GadgetVector, p: int) -> list[np.ndarray]:
    """Per-digit residues [[a]_{Q_i}]_p for an arbitrary modulus p >= 2."""
    if g.flavor == "binary":
        raise ValueError("foreign-modulus conversion applies to digit/prime gadgets")
    if not a.ctx.compatible(g.ctx):
        raise ValueError("element and gadget use different contexts")
    if p < 2:
        raise ValueError(f"invalid target modulus {p}")
    return [_digit_into(a, g, i, p) for i in range(g.k)]


def digit_decompose(a: RingElement, g: GadgetVector, target: RnsContext | None = None) -> DecomposedElement:
    """h(a) with centered digits, stored modulo ``target`` (default: the gadget's ring)."""
    if not a.ctx.compatible(g.ctx):
        raise ValueError("element and gadget use different contexts")
    target = target or g.ctx
    if target.N != g.ctx.N:
        raise ValueError("target ring degree differs")
    if g.flavor == "binary":
        x = _crt(a)
        parts = []
        for i in range(g.k):
            bits = (x >> i) & 1
            parts.append(_from_object_array(bits, target))
        return DecomposedElement(tuple(parts), g.ctx.modulus)
    parts = []
    for i in range(g.k):
        limbs = np.stack([_digit_into(a, g, i, t) for t in target.primes])
        parts.append(RingElement(target, limbs))
    return DecomposedElement(tuple(parts), g.ctx.modulus)


def reconstruct(u: DecomposedElement, g: GadgetVector) -> RingElement:
    """<g, u> mod q."""
    if len(u) != g.k:
        raise ValueError(f"decomposition has {len(u)} parts, gadget has {g.k}")
    acc = RingElement.zero(g.ctx)
    for gi, ui in zip(g.components, u.parts):
        if not ui.ctx.compatible(g.ctx):
            raise ValueError("decomposition is not stored over the gadget's ring")
        acc = acc + ui.scale(gi)
    return acc


def gadget_product(u: DecomposedElement, keys: Sequence[RingElement]) -> RingElement:
    """<u, keys> for a key vector with one entry per gadget component."""
    return inner_product(u.parts, keys)
