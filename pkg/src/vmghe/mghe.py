"""Multigroup BFV over RNS.

Public parameters, party and group key generation (with or without a common
reference string), encryption, multigroup expansion, homomorphic addition,
the combined product/relinearization, and ideal or distributed decryption.

Index conventions follow the multigroup ciphertext layout: component 0 is
the constant slot and component i >= 1 belongs to the i-th group of the
ciphertext roster.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import wire
from .gadget import GadgetVector, build_gadget, digit_decompose
from .presets import Preset, get_preset
from .ring import (
    RingElement,
    RnsContext,
    Sampler,
    SamplerParams,
    center,
    hadamard,
    infinity_norm,
    inner_product,
    lift,
    make_context,
    rescale_round,
    round_div,
)

MODES = ("crs", "crs_free")

# Embedded in every serialized secret key; must never show up in a transcript.
SECRET_KEY_CANARY = b"\x00vmghe-secret-key-canary\x00"


class IncompatibleParams(ValueError):
    pass


class MissingKeyError(KeyError):
    pass


class RosterError(ValueError):
    pass


class ShareError(ValueError):
    pass


def seed_words(*parts) -> list[int]:
    """Stable 128-bit seed material from arbitrary printable parts."""
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return [int.from_bytes(h[i:i + 4], "little") for i in range(0, 16, 4)]


def derived_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed_words(*parts)))


# -- public parameters -----------------------------------------------------

@dataclasses.dataclass(frozen=True, eq=False)
class PublicParams:
    preset: Preset
    mode: str
    seed: int
    ctx: RnsContext
    ext_ctx: RnsContext
    plain_ctx: RnsContext
    sampler_params: SamplerParams
    gadget: GadgetVector
    ext_gadget: GadgetVector
    scaled_ext_gadget: tuple[RingElement, ...]
    crs: tuple[RingElement, ...] | None

    @property
    def N(self) -> int:
        return self.ctx.N

    @property
    def q(self) -> int:
        return self.ctx.modulus

    @property
    def q_ext(self) -> int:
        """The extension modulus q' (q* = q * q')."""
        return self.ext_ctx.modulus // self.ctx.modulus

    @property
    def p(self) -> int:
        return self.plain_ctx.modulus

    @property
    def delta(self) -> int:
        return self.q // self.p

    @property
    def lam(self) -> int:
        return self.preset.lam

    @property
    def k(self) -> int:
        return self.gadget.k

    @property
    def k_star(self) -> int:
        return self.ext_gadget.k

    def relin_mask(self, party: str) -> tuple[RingElement, ...]:
        """Public per-party share of the group's relinearization mask (CRS mode)."""
        if self.mode != "crs":
            raise IncompatibleParams("relinearization masks come from the CRS; none in crs_free mode")
        return Sampler(self.sampler_params, derived_rng(self.seed, "relin-mask", party)).vector(
            self.ctx, "uniform", self.k)

    def to_bytes(self) -> bytes:
        w = wire.Writer(wire.TYPE_PARAMS).text(self.preset.name).text(self.mode).u64(self.seed)
        w.text(repr(dataclasses.astuple(self.preset)))
        return w.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def setup(preset: Preset | str, mode: str = "crs", seed: int = 0,
          sampler_params: SamplerParams | None = None) -> PublicParams:
    """Public parameters; in ``crs`` mode the uniform vector a is derived from ``seed``."""
    if isinstance(preset, str):
        preset = get_preset(preset)
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    N, p = preset.ring_degree, preset.plain_modulus
    q, q_ext = math.prod(preset.primes), math.prod(preset.ext_primes)
    if math.gcd(q, q_ext) != 1:
        raise IncompatibleParams("q and q' share a factor")
    if p % (2 * N) != 1:
        raise IncompatibleParams(f"plaintext modulus {p} is not 1 mod 2N")
    if math.gcd(p, q) != 1:
        raise IncompatibleParams("plaintext modulus divides q")
    if preset.lam < 2 or preset.lam & (preset.lam - 1) or preset.lam > N:
        raise IncompatibleParams(f"lambda={preset.lam} must be a power of two no larger than N")
    ctx = make_context(N, preset.primes, preset.partition)
    ext_ctx = make_context(N, preset.primes + preset.ext_primes, preset.ext_partition)
    plain_ctx = make_context(N, [p])
    sp = sampler_params or SamplerParams(sigma=preset.sigma, smudge_sigma=preset.smudge_sigma)
    gadget = build_gadget(ctx, "digit")
    ext_gadget = build_gadget(ext_ctx, "digit")
    scaled = tuple(RingElement.constant(ctx, round_div(p * g, q_ext) % q) for g in ext_gadget.components)
    crs = None
    if mode == "crs":
        crs = Sampler(sp, derived_rng(seed, "crs")).vector(ctx, "uniform", ext_gadget.k)
    return PublicParams(preset, mode, seed, ctx, ext_ctx, plain_ctx, sp, gadget, ext_gadget, scaled, crs)


# -- plaintext helpers ------------------------------------------------------

def plaintext(pp: PublicParams, coeffs: Iterable[int]) -> RingElement:
    vals = [int(c) % pp.p for c in coeffs]
    vals += [0] * (pp.N - len(vals))
    if len(vals) != pp.N:
        raise ValueError("plaintext has more than N coefficients")
    return RingElement(pp.plain_ctx, np.array([vals], dtype=np.int64))


def encode_slots(pp: PublicParams, values: Sequence[int]) -> RingElement:
    """CRT (batched) encoding: ring products act slot-wise on the result."""
    if len(values) > pp.N:
        raise ValueError(f"{len(values)} slot values exceed the {pp.N} available slots")
    slots = np.zeros((1, pp.N), dtype=np.int64)
    slots[0, :len(values)] = [int(v) % pp.p for v in values]
    return RingElement(pp.plain_ctx, ntt=slots)


def decode_slots(pp: PublicParams, m: RingElement) -> list[int]:
    return [int(x) for x in m.ntt_values()[0]]


# -- keys ------------------------------------------------------------------

def _vec_bytes(w: wire.Writer, vec: Sequence[RingElement]) -> None:
    w.u32(len(vec))
    for e in vec:
        w.blob(e.to_bytes())


def _vec_read(r: wire.Reader, ctx: RnsContext) -> tuple[RingElement, ...]:
    return tuple(RingElement.from_bytes(ctx, r.blob()) for _ in range(r.u32()))


def _vec_add(xs: Sequence[RingElement], ys: Sequence[RingElement]) -> tuple[RingElement, ...]:
    if len(xs) != len(ys):
        raise ValueError("vector length mismatch")
    return tuple(x + y for x, y in zip(xs, ys))


def _vec_sum(vectors: Sequence[Sequence[RingElement]]) -> tuple[RingElement, ...]:
    acc = tuple(vectors[0])
    for v in vectors[1:]:
        acc = _vec_add(acc, v)
    return acc


def _vec_equal(xs: Sequence[RingElement], ys: Sequence[RingElement]) -> bool:
    return len(xs) == len(ys) and all(x == y for x, y in zip(xs, ys))


@dataclasses.dataclass(frozen=True, eq=False)
class SecretKey:
    party: str
    group: str
    s: RingElement

    def to_bytes(self) -> bytes:
        return (wire.Writer(wire.TYPE_SECRET_KEY).blob(SECRET_KEY_CANARY).text(self.party)
                .text(self.group).blob(self.s.to_bytes()).getvalue())

    @classmethod
    def from_bytes(cls, pp: PublicParams, data: bytes) -> "SecretKey":
        r = wire.Reader(data, wire.TYPE_SECRET_KEY)
        if r.blob() != SECRET_KEY_CANARY:
            raise ValueError("secret key blob lacks its canary")
        out = cls(r.text(), r.text(), RingElement.from_bytes(pp.ctx, r.blob()))
        r.done()
        return out


@dataclasses.dataclass(frozen=True, eq=False)
class EncryptionKey:
    """(b[0], a[0]) for one party (ek_i) or one group (jek_l)."""

    owner: str
    b0: RingElement
    a0: RingElement


@dataclasses.dataclass(frozen=True, eq=False)
class CoinShare:
    """Uniform contributions to a group's common vectors (crs_free mode).

    ``a`` feeds the group vector alpha, ``v0[target]`` the relinearization
    mask the group uses towards ``target``.
    """

    party: str
    group: str
    a: tuple[RingElement, ...]
    v0: dict[str, tuple[RingElement, ...]]

    def to_bytes(self) -> bytes:
        w = wire.Writer(wire.TYPE_COIN_SHARE).text(self.party).text(self.group)
        _vec_bytes(w, self.a)
        w.u32(len(self.v0))
        for t in sorted(self.v0):
            w.text(t)
            _vec_bytes(w, self.v0[t])
        return w.getvalue()

    @classmethod
    def from_bytes(cls, pp: PublicParams, data: bytes) -> "CoinShare":
        r = wire.Reader(data, wire.TYPE_COIN_SHARE)
        party, group = r.text(), r.text()
        a = _vec_read(r, pp.ctx)
        v0 = {}
        for _ in range(r.u32()):
            t = r.text()
            v0[t] = _vec_read(r, pp.ctx)
        r.done()
        return cls(party, group, a, v0)


@dataclasses.dataclass(frozen=True, eq=False)
class GroupCommons:
    """Public vectors every member of a group agrees on before key generation."""

    group: str
    alpha: tuple[RingElement, ...]
    nu0: dict[str, tuple[RingElement, ...]]
    v0_shares: dict[str, dict[str, tuple[RingElement, ...]]]


def crs_commons(pp: PublicParams, group: str, roster: Sequence[str]) -> GroupCommons:
    """Group commons derived from the CRS alone (no interaction)."""
    if pp.mode != "crs":
        raise IncompatibleParams("crs_commons needs crs mode")
    shares = {party: {group: pp.relin_mask(party)} for party in roster}
    return GroupCommons(group, pp.crs, {group: _vec_sum([s[group] for s in shares.values()])}, shares)


def coin_share(pp: PublicParams, sampler: Sampler, party: str, group: str,
               targets: Iterable[str]) -> CoinShare:
    a = sampler.vector(pp.ctx, "uniform", pp.k_star)
    v0 = {t: sampler.vector(pp.ctx, "uniform", pp.k) for t in targets}
    return CoinShare(party, group, a, v0)


def aggregate_coins(shares: Sequence[CoinShare]) -> GroupCommons:
    if not shares:
        raise ValueError("empty roster")
    group = shares[0].group
    if any(s.group != group for s in shares):
        raise ValueError("coin shares from different groups")
    targets = sorted(shares[0].v0)
    if any(sorted(s.v0) != targets for s in shares):
        raise ValueError("coin shares disagree on target groups")
    return GroupCommons(
        group,
        _vec_sum([s.a for s in shares]),
        {t: _vec_sum([s.v0[t] for s in shares]) for t in targets},
        {s.party: dict(s.v0) for s in shares},
    )


@dataclasses.dataclass(frozen=True, eq=False)
class PublicKeyShare:
    party: str
    group: str
    b: tuple[RingElement, ...]
    v0: tuple[RingElement, ...]
    v1: tuple[RingElement, ...]
    v2: tuple[RingElement, ...]
    a: tuple[RingElement, ...] | None = None

    def to_bytes(self) -> bytes:
        w = wire.Writer(wire.TYPE_PUBLIC_SHARE).text(self.party).text(self.group)
        for vec in (self.b, self.v0, self.v1, self.v2):
            _vec_bytes(w, vec)
        w.u8(self.a is not None)
        if self.a is not None:
            _vec_bytes(w, self.a)
        return w.getvalue()

    @classmethod
    def from_bytes(cls, pp: PublicParams, data: bytes) -> "PublicKeyShare":
        r = wire.Reader(data, wire.TYPE_PUBLIC_SHARE)
        party, group = r.text(), r.text()
        b, v0, v1, v2 = (_vec_read(r, pp.ctx) for _ in range(4))
        a = _vec_read(r, pp.ctx) if r.u8() else None
        r.done()
        return cls(party, group, b, v0, v1, v2, a)


def keygen_party(pp: PublicParams, sampler: Sampler, party: str, group: str,
                 commons: GroupCommons, own_a: Sequence[RingElement] | None = None,
                 return_randomness: bool = False):
    """Secret key, public-key share and individual encryption key of one party.

    ``commons`` carries the group's vector (a in crs mode, alpha otherwise)
    and the summed relinearization mask nu_0.  The internal randomness r is
    discarded unless ``return_randomness`` is set (tests only).
    """
    if commons.group != group:
        raise ValueError("commons belong to another group")
    if (pp.mode == "crs_free") != (own_a is not None):
        raise IncompatibleParams("per-party a_i is required exactly in crs_free mode")
    ctx = pp.ctx
    s = sampler.secret(ctx)
    r = sampler.secret(ctx)
    a, nu0 = commons.alpha, commons.nu0[group]
    g = pp.gadget.components
    b = tuple(-(s * ak) + sampler.error(ctx) for ak in a)
    v1 = tuple(-(s * n0) - r.scale(gk) + sampler.error(ctx) for n0, gk in zip(nu0, g))
    v2 = tuple(-(r * ak) + s * gs + sampler.error(ctx) for ak, gs in zip(a, pp.scaled_ext_gadget))
    share = PublicKeyShare(party, group, b, commons.v0_shares[party][group], v1, v2,
                           tuple(own_a) if own_a is not None else None)
    out = (SecretKey(party, group, s), share, EncryptionKey(party, b[0], a[0]))
    return out + (r,) if return_randomness else out


@dataclasses.dataclass(frozen=True, eq=False)
class GroupPublic:
    """What a group broadcasts about itself: beta and its vector a / alpha."""

    group: str
    beta: tuple[RingElement, ...]
    alpha: tuple[RingElement, ...]

    @property
    def jek(self) -> EncryptionKey:
        return EncryptionKey(self.group, self.beta[0], self.alpha[0])

    def to_bytes(self) -> bytes:
        w = wire.Writer(wire.TYPE_GROUP_PUBLIC).text(self.group)
        _vec_bytes(w, self.beta)
        _vec_bytes(w, self.alpha)
        return w.getvalue()

    @classmethod
    def from_bytes(cls, pp: PublicParams, data: bytes) -> "GroupPublic":
        r = wire.Reader(data, wire.TYPE_GROUP_PUBLIC)
        out = cls(r.text(), _vec_read(r, pp.ctx), _vec_read(r, pp.ctx))
        r.done()
        return out


@dataclasses.dataclass(frozen=True, eq=False)
class RelinKey:
    """(nu_0, nu_1, nu_2) of a group, aimed at the ``target`` group's vector."""

    group: str
    target: str
    nu0: tuple[RingElement, ...]
    nu1: tuple[RingElement, ...]
    nu2: tuple[RingElement, ...]


@dataclasses.dataclass(frozen=True, eq=False)
class JointKeys:
    group: str
    roster: tuple[str, ...]
    beta: tuple[RingElement, ...]
    nu0: tuple[RingElement, ...]
    nu1: tuple[RingElement, ...]
    nu2: tuple[RingElement, ...]
    alpha: tuple[RingElement, ...]
    cross: Mapping[str, RelinKey] = dataclasses.field(default_factory=dict)

    @property
    def jek(self) -> EncryptionKey:
        return EncryptionKey(self.group, self.beta[0], self.alpha[0])

    def public(self) -> GroupPublic:
        return GroupPublic(self.group, self.beta, self.alpha)

    def relin_for(self, target: str) -> RelinKey:
        if target == self.group:
            return RelinKey(self.group, target, self.nu0, self.nu1, self.nu2)
        try:
            return self.cross[target]
        except KeyError:
            raise MissingKeyError(f"group {self.group!r} has no cross-group key towards {target!r}") from None

    def with_cross(self, cross: Mapping[str, RelinKey]) -> "JointKeys":
        return dataclasses.replace(self, cross=dict(cross))


def aggregate_group(shares: Sequence[PublicKeyShare], pp: PublicParams, commons: GroupCommons) -> JointKeys:
    """Component-wise sums of the members' shares."""
    if not shares:
        raise ValueError("empty roster")
    group = shares[0].group
    if any(s.group != group for s in shares):
        raise ValueError("shares from different groups")
    parties = [s.party for s in shares]
    if len(set(parties)) != len(parties):
        raise ValueError("duplicate party in roster")
    crs_free = [s.a is not None for s in shares]
    if any(crs_free) and not all(crs_free):
        raise IncompatibleParams("mixed crs and crs_free shares")
    if all(crs_free) != (pp.mode == "crs_free"):
        raise IncompatibleParams("share mode does not match the parameters")
    nu0 = _vec_sum([s.v0 for s in shares])
    if not _vec_equal(nu0, commons.nu0[group]):
        raise ValueError("relinearization mask shares do not add up to the group mask")
    alpha = commons.alpha
    if pp.mode == "crs_free" and not _vec_equal(_vec_sum([s.a for s in shares]), alpha):
        raise ValueError("per-party a_i do not add up to the group vector")
    return JointKeys(
        group=group,
        roster=tuple(parties),
        beta=_vec_sum([s.b for s in shares]),
        nu0=nu0,
        nu1=_vec_sum([s.v1 for s in shares]),
        nu2=_vec_sum([s.v2 for s in shares]),
        alpha=alpha,
    )


@dataclasses.dataclass(frozen=True, eq=False)
class CrossShare:
    party: str
    group: str
    target: str
    v0: tuple[RingElement, ...]
    v1: tuple[RingElement, ...]
    v2: tuple[RingElement, ...]

    def to_bytes(self) -> bytes:
        w = wire.Writer(wire.TYPE_CROSS_SHARE).text(self.party).text(self.group).text(self.target)
        for vec in (self.v0, self.v1, self.v2):
            _vec_bytes(w, vec)
        return w.getvalue()

    @classmethod
    def from_bytes(cls, pp: PublicParams, data: bytes) -> "CrossShare":
        r = wire.Reader(data, wire.TYPE_CROSS_SHARE)
        party, group, target = r.text(), r.text(), r.text()
        v0, v1, v2 = (_vec_read(r, pp.ctx) for _ in range(3))
        r.done()
        return cls(party, group, target, v0, v1, v2)


def keygen_cross_group(pp: PublicParams, sampler: Sampler, sk: SecretKey, commons: GroupCommons,
                       foreign: GroupPublic, return_randomness: bool = False):
    """Share of the key that lets products with ``foreign`` relinearize (crs_free only)."""
    if pp.mode != "crs_free":
        raise IncompatibleParams("cross-group keys exist only in crs_free mode")
    if foreign.group == sk.group:
        raise ValueError("cross-group key requested for the party's own group")
    if foreign.group not in commons.nu0:
        raise MissingKeyError(f"unknown foreign group {foreign.group!r}")
    ctx = pp.ctx
    r = sampler.secret(ctx)
    nu0 = commons.nu0[foreign.group]
    v1 = tuple(-(sk.s * n0) - r.scale(gk) + sampler.error(ctx) for n0, gk in zip(nu0, pp.gadget.components))
    v2 = tuple(-(r * ak) + sk.s * gs + sampler.error(ctx) for ak, gs in zip(foreign.alpha, pp.scaled_ext_gadget))
    share = CrossShare(sk.party, sk.group, foreign.group, commons.v0_shares[sk.party][foreign.group], v1, v2)
    return (share, r) if return_randomness else share


def aggregate_cross(shares: Sequence[CrossShare], commons: GroupCommons) -> RelinKey:
    if not shares:
        raise ValueError("empty roster")
    group, target = shares[0].group, shares[0].target
    if any((s.group, s.target) != (group, target) for s in shares):
        raise ValueError("cross shares for different group pairs")
    nu0 = _vec_sum([s.v0 for s in shares])
    if not _vec_equal(nu0, commons.nu0[target]):
        raise ValueError("cross mask shares do not add up to the group mask")
    return RelinKey(group, target, nu0, _vec_sum([s.v1 for s in shares]), _vec_sum([s.v2 for s in shares]))


def ideal_secret(sks: Iterable[SecretKey]) -> RingElement:
    """Test-only: the never-assembled group secret sum_i s_i."""
    sks = list(sks)
    acc = sks[0].s
    for sk in sks[1:]:
        acc = acc + sk.s
    return acc


# -- ciphertexts -----------------------------------------------------------

@dataclasses.dataclass(frozen=True, eq=False)
class MultigroupCiphertext:
    components: tuple[RingElement, ...]
    roster: tuple[str, ...]

    def __post_init__(self):
        if len(self.components) != len(self.roster) + 1:
            raise RosterError(f"{len(self.components)} components for a roster of {len(self.roster)}")
        if len(set(self.roster)) != len(self.roster):
            raise RosterError("duplicate group in roster")

    @property
    def n(self) -> int:
        return len(self.roster)

    def component(self, group: str) -> RingElement:
        return self.components[self.roster.index(group) + 1]

    def to_bytes(self) -> bytes:
        w = wire.Writer(wire.TYPE_CIPHERTEXT).u32(len(self.roster))
        for g in self.roster:
            w.text(g)
        for c in self.components:
            w.blob(c.to_bytes())
        return w.getvalue()

    @classmethod
    def from_bytes(cls, pp: PublicParams, data: bytes) -> "MultigroupCiphertext":
        r = wire.Reader(data, wire.TYPE_CIPHERTEXT)
        roster = tuple(r.text() for _ in range(r.u32()))
        comps = tuple(RingElement.from_bytes(pp.ctx, r.blob()) for _ in range(len(roster) + 1))
        r.done()
        return cls(comps, roster)

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_bytes()).digest()


def _scaled_plain(pp: PublicParams, m: RingElement) -> RingElement:
    mc = center(m.limbs[0], pp.p)
    return RingElement(pp.ctx, (mc[None, :] % pp.ctx._q) * pp.ctx.residues(pp.delta) % pp.ctx._q)


def _as_plain(pp: PublicParams, m) -> RingElement:
    if isinstance(m, RingElement):
        if not m.ctx.compatible(pp.plain_ctx):
            raise ValueError("plaintext is not an element of R_p")
        return m
    return plaintext(pp, m)


def encrypt(pp: PublicParams, ek: EncryptionKey, m, sampler: Sampler) -> MultigroupCiphertext:
    """ct = t * (b0, a0) + (Delta * M + e0, e1) mod q, with t from the key distribution."""
    m = _as_plain(pp, m)
    ctx = pp.ctx
    t = sampler.secret(ctx)
    c0 = t * ek.b0 + _scaled_plain(pp, m) + sampler.error(ctx)
    c1 = t * ek.a0 + sampler.error(ctx)
    return MultigroupCiphertext((c0, c1), (ek.owner,))


def expand(ct: MultigroupCiphertext, position: int, roster: Sequence[str]) -> MultigroupCiphertext:
    """Place a single-group ciphertext at 1-based ``position`` of ``roster``."""
    roster = tuple(roster)
    if ct.n != 1:
        raise RosterError("expand takes a single-group ciphertext; use align for multigroup ones")
    if not 1 <= position <= len(roster):
        raise RosterError(f"position {position} outside 1..{len(roster)}")
    if roster[position - 1] != ct.roster[0]:
        raise RosterError(f"slot {position} of the roster is not group {ct.roster[0]!r}")
    zero = RingElement.zero(ct.components[0].ctx)
    comps = [ct.components[0]] + [zero] * len(roster)
    comps[position] = ct.components[1]
    return MultigroupCiphertext(tuple(comps), roster)


def align(ct: MultigroupCiphertext, roster: Sequence[str]) -> MultigroupCiphertext:
    """Re-index ``ct`` onto a roster that contains its own."""
    roster = tuple(roster)
    missing = set(ct.roster) - set(roster)
    if missing:
        raise RosterError(f"target roster drops groups {sorted(missing)}")
    if roster == ct.roster:
        return ct
    zero = RingElement.zero(ct.components[0].ctx)
    comps = [ct.components[0]] + [ct.component(g) if g in ct.roster else zero for g in roster]
    return MultigroupCiphertext(tuple(comps), roster)


def union_roster(*rosters: Sequence[str]) -> tuple[str, ...]:
    out: list[str] = []
    for r in rosters:
        out.extend(g for g in r if g not in out)
    return tuple(out)


def _align_pair(ct: MultigroupCiphertext, ct2: MultigroupCiphertext):
    roster = union_roster(ct.roster, ct2.roster)
    return align(ct, roster), align(ct2, roster)


def eval_add(ct: MultigroupCiphertext, ct2: MultigroupCiphertext) -> MultigroupCiphertext:
    ct, ct2 = _align_pair(ct, ct2)
    return MultigroupCiphertext(tuple(a + b for a, b in zip(ct.components, ct2.components)), ct.roster)


def eval_sub(ct: MultigroupCiphertext, ct2: MultigroupCiphertext) -> MultigroupCiphertext:
    ct, ct2 = _align_pair(ct, ct2)
    return MultigroupCiphertext(tuple(a - b for a, b in zip(ct.components, ct2.components)), ct.roster)


def add_plain(pp: PublicParams, ct: MultigroupCiphertext, m) -> MultigroupCiphertext:
    m = _as_plain(pp, m)
    return MultigroupCiphertext((ct.components[0] + _scaled_plain(pp, m),) + ct.components[1:], ct.roster)


def mul_scalar(pp: PublicParams, ct: MultigroupCiphertext, c: int) -> MultigroupCiphertext:
    c = int(center(int(c), pp.p))
    return MultigroupCiphertext(tuple(x.scale(c) for x in ct.components), ct.roster)


def mul_plain(pp: PublicParams, ct: MultigroupCiphertext, m) -> MultigroupCiphertext:
    """Multiply by a plaintext polynomial (centered lift into R_q)."""
    m = _as_plain(pp, m)
    mc = RingElement(pp.ctx, center(m.limbs[0], pp.p)[None, :] % pp.ctx._q)
    return MultigroupCiphertext(tuple(x * mc for x in ct.components), ct.roster)


def _check_keys(roster: Sequence[str], keys: Mapping[str, JointKeys]) -> None:
    for g in roster:
        if g not in keys:
            raise MissingKeyError(f"no joint keys for group {g!r}")


def _sum_vectors(vectors: list[list[RingElement]]) -> list[RingElement]:
    acc = vectors[0]
    for v in vectors[1:]:
        acc = [a + b for a, b in zip(acc, v)]
    return acc


def eval_mul(pp: PublicParams, ct: MultigroupCiphertext, ct2: MultigroupCiphertext,
             keys: Mapping[str, JointKeys]) -> MultigroupCiphertext:
    """Product combined with relinearization.

    Tensor terms are formed over q* = q*q' after moving ``ct2`` to scale q';
    the quadratic terms never materialize and are folded back through the
    digit decompositions h* (over q*) and h (over q).
    """
    ct, ct2 = _align_pair(ct, ct2)
    roster = ct.roster
    _check_keys(roster, keys)
    n = ct.n
    ctx, ext = pp.ctx, pp.ext_ctx
    p, q, q_ext = pp.p, pp.q, pp.q_ext

    c = [lift(x, ext) for x in ct.components]
    cpp = [rescale_round(x, q_ext, q, ext) for x in ct2.components]                 # (a)
    star = [rescale_round(c[0] * cpp[0], p, q_ext, ctx)]                             # (b)
    for j in range(1, n + 1):                                                        # (c)
        star.append(rescale_round(c[0] * cpp[j] + c[j] * cpp[0], p, q_ext, ctx))

    live_i = [i for i in range(1, n + 1) if not ct.components[i].is_zero()]
    live_j = [j for j in range(1, n + 1) if not ct2.components[j].is_zero()]
    hc = {i: digit_decompose(c[i], pp.ext_gadget, ctx).parts for i in live_i}
    hcpp = {j: digit_decompose(cpp[j], pp.ext_gadget, ctx).parts for j in live_j}
    if not live_i or not live_j:
        return MultigroupCiphertext(tuple(star), roster)

    if pp.mode == "crs":
        _relin_shared(pp, roster, keys, hc, hcpp, star)
    else:
        _relin_per_target(pp, roster, keys, hc, hcpp, star)
    return MultigroupCiphertext(tuple(star), roster)


def _relin_shared(pp, roster, keys, hc, hcpp, star) -> None:
    # One z and one w serve every pair because all groups share the CRS a.
    z = _sum_vectors([hadamard(hc[i], keys[roster[i - 1]].nu2) for i in hc])             # (d)
    w = _sum_vectors([hadamard(hcpp[j], keys[roster[j - 1]].beta) for j in hcpp])        # (e)
    for j in hcpp:                                                                        # (f.i)
        star[j] = star[j] + inner_product(hcpp[j], z)
    for i in hc:                                                                          # (f.ii)
        key = keys[roster[i - 1]]
        hx = digit_decompose(inner_product(hc[i], w), pp.gadget).parts
        star[0] = star[0] + inner_product(hx, key.nu1)
        star[i] = star[i] + inner_product(hx, key.nu0)


def _relin_per_target(pp, roster, keys, hc, hcpp, star) -> None:
    # Without a CRS each target group j has its own alpha_j, so z and the
    # relinearization of <h*(c_i), w> are formed per (i, j) pair.
    for j in hcpp:
        gj = roster[j - 1]
        z_j = _sum_vectors([hadamard(hc[i], keys[roster[i - 1]].relin_for(gj).nu2) for i in hc])
        star[j] = star[j] + inner_product(hcpp[j], z_j)
        w_j = hadamard(hcpp[j], keys[gj].beta)
        for i in hc:
            rk = keys[roster[i - 1]].relin_for(gj)
            hx = digit_decompose(inner_product(hc[i], w_j), pp.gadget).parts
            star[0] = star[0] + inner_product(hx, rk.nu1)
            star[i] = star[i] + inner_product(hx, rk.nu0)


def eval_mul_crsfree(pp: PublicParams, ct: MultigroupCiphertext, ct2: MultigroupCiphertext,
                     keys: Mapping[str, JointKeys]) -> MultigroupCiphertext:
    if pp.mode != "crs_free":
        raise IncompatibleParams("eval_mul_crsfree needs crs_free parameters")
    return eval_mul(pp, ct, ct2, keys)


# -- decryption ------------------------------------------------------------

def phase(pp: PublicParams, ct: MultigroupCiphertext, jsk: Mapping[str, RingElement]) -> RingElement:
    """<ct, (1, jsk_1, ..., jsk_n)> mod q."""
    missing = [g for g in ct.roster if g not in jsk]
    if missing:
        raise MissingKeyError(f"no ideal key for groups {missing}")
    acc = ct.components[0]
    for g, c in zip(ct.roster, ct.components[1:]):
        acc = acc + c * jsk[g]
    return acc


def _round_to_plain(pp: PublicParams, mu: RingElement) -> RingElement:
    return rescale_round(mu, pp.p, pp.q, pp.plain_ctx)


def ideal_decrypt(pp: PublicParams, ct: MultigroupCiphertext, jsk: Mapping[str, RingElement]) -> RingElement:
    return _round_to_plain(pp, phase(pp, ct, jsk))


def noise(pp: PublicParams, ct: MultigroupCiphertext, jsk: Mapping[str, RingElement], expected) -> int:
    """Infinity norm of phase - Delta*M for the expected plaintext M."""
    m = _as_plain(pp, expected)
    return infinity_norm(phase(pp, ct, jsk) - _scaled_plain(pp, m))


def noise_budget_bits(pp: PublicParams, noise_norm: int) -> float:
    """log2 of the remaining headroom below Delta/2 (negative once exhausted)."""
    return math.log2(pp.delta / 2) - math.log2(max(noise_norm, 1))


@dataclasses.dataclass(frozen=True, eq=False)
class DecryptionShare:
    group: str
    party: str
    mu: RingElement
    ct_digest: bytes

    def to_bytes(self) -> bytes:
        return (wire.Writer(wire.TYPE_DECRYPTION_SHARE).text(self.group).text(self.party)
                .blob(self.ct_digest).blob(self.mu.to_bytes()).getvalue())

    @classmethod
    def from_bytes(cls, pp: PublicParams, data: bytes) -> "DecryptionShare":
        r = wire.Reader(data, wire.TYPE_DECRYPTION_SHARE)
        group, party, digest = r.text(), r.text(), r.blob()
        out = cls(group, party, RingElement.from_bytes(pp.ctx, r.blob()), digest)
        r.done()
        return out


def partial_decrypt(pp: PublicParams, ct: MultigroupCiphertext, sk: SecretKey, sampler: Sampler) -> DecryptionShare:
    """mu_{j,i} = c_j * s_i + e'_i with smudging noise e'_i."""
    if sk.group not in ct.roster:
        raise RosterError(f"group {sk.group!r} is not in the ciphertext roster")
    mu = ct.component(sk.group) * sk.s + sampler.smudge(pp.ctx)
    return DecryptionShare(sk.group, sk.party, mu, ct.digest())


def merge_group_shares(shares: Sequence[DecryptionShare]) -> RingElement:
    """mu_j = sum_i mu_{j,i}."""
    acc = shares[0].mu
    for s in shares[1:]:
        acc = acc + s.mu
    return acc


def combine_shares(pp: PublicParams, ct: MultigroupCiphertext, shares: Sequence[DecryptionShare],
                   rosters: Mapping[str, Sequence[str]]) -> RingElement:
    """Merge shares into mu = c_0 + sum_j mu_j and round to R_p.

    Refuses to output anything unless every party of every roster group
    contributed exactly one share for this very ciphertext.
    """
    digest = ct.digest()
    by_group: dict[str, dict[str, DecryptionShare]] = {g: {} for g in ct.roster}
    for s in shares:
        if s.ct_digest != digest:
            raise ShareError(f"share of {s.party!r} refers to a different ciphertext")
        if s.group not in by_group:
            raise ShareError(f"share from group {s.group!r} outside the ciphertext roster")
        if s.party in by_group[s.group]:
            raise ShareError(f"duplicate share from {s.party!r}")
        by_group[s.group][s.party] = s
    mu = ct.components[0]
    for g in ct.roster:
        expected = set(rosters[g])
        got = set(by_group[g])
        if got != expected:
            raise ShareError(f"group {g!r}: missing shares from {sorted(expected - got)}, "
                             f"unexpected from {sorted(got - expected)}")
        mu = mu + merge_group_shares([by_group[g][pid] for pid in rosters[g]])
    return _round_to_plain(pp, mu)


def combine_merged(pp: PublicParams, ct: MultigroupCiphertext, merged: Mapping[str, RingElement]) -> RingElement:
    """Final merge from per-group sums mu_j (second decryption round)."""
    missing = [g for g in ct.roster if g not in merged]
    if missing:
        raise ShareError(f"no merged share for groups {missing}")
    extra = set(merged) - set(ct.roster)
    if extra:
        raise ShareError(f"merged shares from groups outside the roster: {sorted(extra)}")
    mu = ct.components[0]
    for g in ct.roster:
        mu = mu + merged[g]
    return _round_to_plain(pp, mu)


def plain_ints(m: RingElement) -> list[int]:
    return [int(x) for x in m.limbs[0]]


