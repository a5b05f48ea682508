"""Labeled programs, circuit hash trees and the replication-encoding authenticator.

A fresh authenticator for message m under label tau is an encryption of the
lambda-slot vector whose slot j holds m when j is outside the secret
challenge set S and the PRF value F(tau, j) otherwise, together with the
leaf tag F(tau).  Evaluation runs the circuit slot-wise on ciphertexts and
replaces its gates by hashes on the tags.
"""

from __future__ import annotations

import ast
import dataclasses
import hashlib
import hmac
import struct
from typing import Callable, Mapping, Sequence

import numpy as np

from . import mghe

OPS = ("input", "const", "add", "mul")
MAX_LABEL_BYTES = 256
TAG_BYTES = 32


class LabelReuse(ValueError):
    pass


class DepthExceeded(ValueError):
    pass


# -- labeled programs ------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class Gate:
    """One wire of a circuit.

    ``input`` gates carry the input position in ``value``, ``const`` gates
    the constant; ``add``/``mul`` gates reference two earlier wires.
    """

    op: str
    args: tuple[int, ...] = ()
    value: int = 0


@dataclasses.dataclass(frozen=True)
class LabeledProgram:
    gates: tuple[Gate, ...]
    labels: tuple[bytes, ...]
    output: int

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("input labels must be pairwise distinct")
        for lab in self.labels:
            if not isinstance(lab, bytes) or len(lab) > MAX_LABEL_BYTES:
                raise ValueError(f"labels are byte strings of at most {MAX_LABEL_BYTES} bytes")
        seen_inputs = []
        for idx, g in enumerate(self.gates):
            if g.op not in OPS:
                raise ValueError(f"unknown gate type {g.op!r}")
            want = 2 if g.op in ("add", "mul") else 0
            if len(g.args) != want:
                raise ValueError(f"gate {idx} ({g.op}) needs {want} operands")
            if any(not 0 <= a < idx for a in g.args):
                raise ValueError(f"gate {idx} references a later or missing wire")
            if g.op == "input":
                seen_inputs.append(g.value)
        if sorted(seen_inputs) != list(range(len(self.labels))):
            raise ValueError("every label needs exactly one input wire")
        if not 0 <= self.output < len(self.gates):
            raise ValueError("output wire out of range")

    @property
    def arity(self) -> int:
        return len(self.labels)

    def depth(self) -> int:
        """Multiplicative depth of the output wire."""
        d = []
        for g in self.gates:
            if g.op in ("input", "const"):
                d.append(0)
            else:
                d.append(max(d[a] for a in g.args) + (g.op == "mul"))
        return d[self.output]

    def mul_count(self) -> int:
        return sum(g.op == "mul" for g in self._live_gates())

    def _live_gates(self) -> list[Gate]:
        live, stack = set(), [self.output]
        while stack:
            w = stack.pop()
            if w not in live:
                live.add(w)
                stack.extend(self.gates[w].args)
        return [self.gates[w] for w in sorted(live)]

    def to_bytes(self) -> bytes:
        """Topologically sorted gate list plus labels."""
        out = bytearray(struct.pack("<II", len(self.labels), len(self.gates)))
        for lab in self.labels:
            out += struct.pack("<I", len(lab)) + lab
        for g in self.gates:
            out += struct.pack("<B", OPS.index(g.op))
            out += struct.pack("<II", *(g.args + (0, 0))[:2])
            out += struct.pack("<Q", g.value)
        out += struct.pack("<I", self.output)
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "LabeledProgram":
        n_lab, n_gates = struct.unpack_from("<II", data, 0)
        pos, labels = 8, []
        for _ in range(n_lab):
            (ln,) = struct.unpack_from("<I", data, pos)
            labels.append(bytes(data[pos + 4:pos + 4 + ln]))
            pos += 4 + ln
        gates = []
        for _ in range(n_gates):
            op = OPS[data[pos]]
            a, b = struct.unpack_from("<II", data, pos + 1)
            (value,) = struct.unpack_from("<Q", data, pos + 9)
            pos += 17
            args = (a, b) if op in ("add", "mul") else ()
            gates.append(Gate(op, args, value))
        (output,) = struct.unpack_from("<I", data, pos)
        if pos + 4 != len(data):
            raise ValueError("trailing bytes after program")
        return cls(tuple(gates), tuple(labels), output)


def _label(x) -> bytes:
    return x.encode() if isinstance(x, str) else bytes(x)


def identity(label) -> LabeledProgram:
    return LabeledProgram((Gate("input", (), 0),), (_label(label),), 0)


class ProgramBuilder:
    """Incremental circuit construction; input wires are shared per label."""

    def __init__(self):
        self.gates: list[Gate] = []
        self.labels: list[bytes] = []
        self._inputs: dict[bytes, int] = {}

    def input(self, label) -> int:
        label = _label(label)
        if label not in self._inputs:
            self._inputs[label] = self._push(Gate("input", (), len(self.labels)))
            self.labels.append(label)
        return self._inputs[label]

    def const(self, c: int) -> int:
        if c < 0:
            raise ValueError("constants are elements of Z_p given by their canonical value")
        return self._push(Gate("const", (), int(c)))

    def add(self, a: int, b: int) -> int:
        return self._push(Gate("add", (a, b)))

    def mul(self, a: int, b: int) -> int:
        return self._push(Gate("mul", (a, b)))

    def _push(self, g: Gate) -> int:
        self.gates.append(g)
        return len(self.gates) - 1

    def embed(self, prog: LabeledProgram) -> int:
        """Copy ``prog`` in, merging its inputs with existing equal labels."""
        remap = []
        for g in prog.gates:
            if g.op == "input":
                remap.append(self.input(prog.labels[g.value]))
            elif g.op == "const":
                remap.append(self.const(g.value))
            else:
                remap.append(self._push(Gate(g.op, tuple(remap[a] for a in g.args))))
        return remap[prog.output]

    def build(self, output: int) -> LabeledProgram:
        return LabeledProgram(tuple(self.gates), tuple(self.labels), output)


def compose(g: LabeledProgram, programs: Sequence[LabeledProgram]) -> LabeledProgram:
    """g(P_1, ..., P_t): input i of ``g`` is fed by the output of P_i.

    The labels of ``g`` only fix its arity; equal labels across the P_i are
    merged into one input wire.
    """
    if len(programs) != g.arity:
        raise ValueError(f"circuit takes {g.arity} inputs, got {len(programs)} programs")
    b = ProgramBuilder()
    outs = [b.embed(p) for p in programs]
    remap = []
    for gate in g.gates:
        if gate.op == "input":
            remap.append(outs[gate.value])
        elif gate.op == "const":
            remap.append(b.const(gate.value))
        else:
            remap.append(b._push(Gate(gate.op, tuple(remap[a] for a in gate.args))))
    return b.build(remap[g.output])


_ALIASES = str.maketrans({"×": "*", "·": "*"})


def parse_program(text: str) -> LabeledProgram:
    """Parse ``+``/``*`` expressions over named inputs and integer constants.

    Labels are the input names (UTF-8), in order of first appearance.
    """
    try:
        tree = ast.parse(text.translate(_ALIASES).strip(), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse program {text!r}: {exc.msg}") from None
    b = ProgramBuilder()

    def walk(node) -> int:
        if isinstance(node, ast.BinOp) and isinstance(node.op, (ast.Add, ast.Mult)):
            lhs, rhs = walk(node.left), walk(node.right)
            return b.add(lhs, rhs) if isinstance(node.op, ast.Add) else b.mul(lhs, rhs)
        if isinstance(node, ast.Name):
            return b.input(node.id)
        if isinstance(node, ast.Constant) and type(node.value) is int and node.value >= 0:
            return b.const(node.value)
        raise ValueError(f"unsupported syntax in program: {ast.unparse(node)!r}")

    return b.build(walk(tree.body))


def format_program(prog: LabeledProgram) -> str:
    names = [lab.decode(errors="replace") for lab in prog.labels]
    out = []
    for g in prog.gates:
        if g.op == "input":
            out.append(names[g.value])
        elif g.op == "const":
            out.append(str(g.value))
        else:
            sym = " + " if g.op == "add" else " * "
            out.append(f"({out[g.args[0]]}{sym}{out[g.args[1]]})")
    return out[prog.output]


def evaluate(prog: LabeledProgram, inputs: Sequence, add: Callable, mul: Callable,
             const: Callable[[int], object]):
    """Evaluate over any value domain given its operations."""
    if len(inputs) != prog.arity:
        raise ValueError(f"program has {prog.arity} inputs, got {len(inputs)} values")
    vals: dict[int, object] = {}
    for idx, g in enumerate(prog.gates):
        if g.op == "input":
            vals[idx] = inputs[g.value]
        elif g.op == "const":
            vals[idx] = const(g.value)
        elif g.op == "add":
            vals[idx] = add(vals[g.args[0]], vals[g.args[1]])
        else:
            vals[idx] = mul(vals[g.args[0]], vals[g.args[1]])
    return vals[prog.output]


def evaluate_mod(prog: LabeledProgram, inputs: Sequence[int], p: int) -> int:
    return evaluate(prog, [int(x) % p for x in inputs],
                    lambda a, b: (a + b) % p, lambda a, b: (a * b) % p, lambda c: c % p)


# -- hashing ---------------------------------------------------------------

GATE_TAGS = {"add": b"add", "mul": b"mul", "const": b"cst"}


def crhf(*parts: bytes) -> bytes:
    return hashlib.sha256(b"".join(parts)).digest()


def hash_tree_eval(prog: LabeledProgram, leaf_tags: Sequence[bytes]) -> bytes:
    """Replace the gates of the circuit by H with a gate-type prefix."""
    if len(leaf_tags) != prog.arity:
        raise ValueError(f"program has {prog.arity} inputs, got {len(leaf_tags)} tags")
    return evaluate(prog, list(leaf_tags),
                    lambda a, b: crhf(GATE_TAGS["add"], a, b),
                    lambda a, b: crhf(GATE_TAGS["mul"], a, b),
                    lambda c: crhf(GATE_TAGS["const"], struct.pack("<Q", c)))


class Prf:
    """HMAC-SHA256 keyed PRF with a byte-tag output and a Z_p output."""

    def __init__(self, key: bytes):
        if len(key) < 16:
            raise ValueError("PRF key too short")
        self.key = bytes(key)

    def _mac(self, *parts: bytes) -> bytes:
        msg = b"".join(struct.pack("<I", len(x)) + x for x in parts)
        return hmac.new(self.key, msg, hashlib.sha256).digest()

    def tag(self, label: bytes) -> bytes:
        """F(tau)."""
        return self._mac(b"tag", label)

    def value(self, label: bytes, j: int, p: int) -> int:
        """F(tau, j) in Z_p by rejection sampling on 64-bit blocks."""
        limit = (1 << 64) - (1 << 64) % p
        counter = 0
        while True:
            block = self._mac(b"val", label, struct.pack("<QI", j, counter))
            for off in range(0, len(block), 8):
                x = int.from_bytes(block[off:off + 8], "little")
                if x < limit:
                    return x % p
            counter += 1


# -- challenge sets --------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class SetGenShare:
    bits: tuple[int, ...]
    key: bytes

    def to_bits(self) -> list[int]:
        """Flattened payload: lambda mask bits, then the key bits (LSB first)."""
        key_bits = [(byte >> i) & 1 for byte in self.key for i in range(8)]
        return list(self.bits) + key_bits

    @classmethod
    def from_bits(cls, bits: Sequence[int], lam: int) -> "SetGenShare":
        bits = [int(b) for b in bits]
        if any(b not in (0, 1) for b in bits):
            raise ValueError("share payload is not a bit string")
        kb = bits[lam:]
        if len(kb) % 8:
            raise ValueError("key bits are not byte aligned")
        key = bytes(sum(kb[i + t] << t for t in range(8)) for i in range(0, len(kb), 8))
        return cls(tuple(bits[:lam]), key)


@dataclasses.dataclass(frozen=True)
class ChallengeSet:
    indices: tuple[int, ...]
    lam: int
    mask: tuple[int, ...]
    digest: bytes
    prf_key: bytes = dataclasses.field(repr=False)

    def __post_init__(self):
        if len(self.indices) != self.lam // 2 or len(set(self.indices)) != len(self.indices):
            raise ValueError("challenge set must hold exactly lambda/2 distinct indices")
        if any(not 0 <= j < self.lam for j in self.indices):
            raise ValueError("challenge index out of range")

    def __contains__(self, j: int) -> bool:
        return j in self.indices

    def prf(self) -> Prf:
        return Prf(self.prf_key)


def setgen_local(lam: int, rng: np.random.Generator, key_bytes: int = 32) -> SetGenShare:
    bits = tuple(int(b) for b in rng.integers(0, 2, size=lam))
    key = rng.integers(0, 256, size=key_bytes, dtype=np.uint8).tobytes()
    return SetGenShare(bits, key)


def select_indices(mask: Sequence[int], key: bytes, lam: int) -> tuple[int, ...]:
    """Exactly lam/2 indices from the combined mask.

    A mask with lam/2 ones is used as is; any other mask seeds a
    Fisher-Yates shuffle driven by the combined key, and the first lam/2
    positions are taken.
    """
    if sum(mask) == lam // 2:
        return tuple(j for j, b in enumerate(mask) if b)
    prf = Prf(key)
    seed = bytes(mask)
    order = list(range(lam))
    for i in range(lam - 1, 0, -1):
        j = prf.value(b"setgen-shuffle" + seed, i, i + 1)
        order[i], order[j] = order[j], order[i]
    return tuple(sorted(order[:lam // 2]))


def setgen_combine(shares: Sequence[SetGenShare], lam: int) -> ChallengeSet:
    """XOR the shares and derive S."""
    if not shares:
        raise ValueError("no SetGen shares")
    if lam < 2 or lam % 2:
        raise ValueError("lambda must be even")
    for s in shares:
        if len(s.bits) != lam:
            raise ValueError(f"share of length {len(s.bits)}, expected {lam}")
        if len(s.key) != len(shares[0].key):
            raise ValueError("key shares differ in length")
    mask = [0] * lam
    key = bytearray(len(shares[0].key))
    h = hashlib.sha256(b"setgen")
    for s in shares:
        mask = [a ^ b for a, b in zip(mask, s.bits)]
        key = bytearray(a ^ b for a, b in zip(key, s.key))
        h.update(bytes(s.bits) + s.key)
    return ChallengeSet(select_indices(mask, bytes(key), lam), lam, tuple(mask), h.digest(), bytes(key))


# -- authenticators --------------------------------------------------------

class SessionRegistry:
    """Labels authenticated in this session and the messages they carry."""

    def __init__(self):
        self._msgs: dict[bytes, int] = {}

    def record(self, label: bytes, m: int) -> None:
        if label in self._msgs and self._msgs[label] != m:
            raise LabelReuse(f"label {label!r} already authenticates another message")
        self._msgs[label] = m

    def __contains__(self, label: bytes) -> bool:
        return label in self._msgs

    def labels(self) -> tuple[bytes, ...]:
        return tuple(self._msgs)


@dataclasses.dataclass(frozen=True, eq=False)
class Authenticator:
    ct: mghe.MultigroupCiphertext
    tag: bytes
    program: LabeledProgram

    def to_bytes(self) -> bytes:
        return self.ct.to_bytes() + self.tag

    @classmethod
    def from_bytes(cls, pp: mghe.PublicParams, data: bytes, program: LabeledProgram) -> "Authenticator":
        return cls(mghe.MultigroupCiphertext.from_bytes(pp, data[:-TAG_BYTES]), data[-TAG_BYTES:], program)


def replicate(m: int, label: bytes, S: ChallengeSet, prf: Prf, p: int) -> list[int]:
    """The lambda-slot extended vector of one message."""
    return [prf.value(label, j, p) if j in S else m % p for j in range(S.lam)]


def auth(pp: mghe.PublicParams, m: int, label, jek: mghe.EncryptionKey, S: ChallengeSet,
         prf: Prf, sampler, registry: SessionRegistry | None = None) -> Authenticator:
    label = _label(label)
    if S.lam > pp.N:
        raise ValueError(f"lambda={S.lam} exceeds the {pp.N} plaintext slots")
    m = int(m) % pp.p
    if registry is not None:
        registry.record(label, m)
    slots = mghe.encode_slots(pp, replicate(m, label, S, prf, pp.p))
    return Authenticator(mghe.encrypt(pp, jek, slots, sampler), prf.tag(label), identity(label))


def _const_plain(pp: mghe.PublicParams, c: int):
    return mghe.plaintext(pp, [c])  # constant polynomial: c in every slot


def eval_authenticated(pp: mghe.PublicParams, prog: LabeledProgram, gammas: Sequence[Authenticator],
                       keys: Mapping[str, mghe.JointKeys], max_depth: int | None = None) -> Authenticator:
    """Slot-wise homomorphic evaluation plus the hash tree on the tags."""
    if len(gammas) != prog.arity:
        raise ValueError(f"program has {prog.arity} inputs, got {len(gammas)} authenticators")
    if prog.arity == 0:
        raise ValueError("program has no inputs")
    if max_depth is not None and prog.depth() > max_depth:
        raise DepthExceeded(f"depth {prog.depth()} exceeds the budget {max_depth}")

    def add(a, b):
        if isinstance(a, int) and isinstance(b, int):
            return (a + b) % pp.p
        if isinstance(a, int):
            a, b = b, a
        if isinstance(b, int):
            return mghe.add_plain(pp, a, _const_plain(pp, b))
        return mghe.eval_add(a, b)

    def mul(a, b):
        if isinstance(a, int) and isinstance(b, int):
            return (a * b) % pp.p
        if isinstance(a, int):
            a, b = b, a
        if isinstance(b, int):
            return mghe.mul_scalar(pp, a, b)
        return mghe.eval_mul(pp, a, b, keys)

    ct = evaluate(prog, [g.ct for g in gammas], add, mul, lambda c: c % pp.p)
    if isinstance(ct, int):
        raise ValueError("program output does not depend on any input")
    return Authenticator(ct, hash_tree_eval(prog, [g.tag for g in gammas]), prog)


@dataclasses.dataclass(frozen=True)
class Verdict:
    accepted: bool
    value: int | None = None
    reason: str | None = None
    slots: tuple[int, ...] = ()


REASONS = ("tag-mismatch", "challenge-mismatch", "replica-mismatch", "decryption-failure")


def verify(pp: mghe.PublicParams, prog: LabeledProgram, gamma: Authenticator, S: ChallengeSet, prf: Prf,
           decrypt: Callable[[mghe.MultigroupCiphertext], object],
           registry: SessionRegistry | None = None) -> Verdict:
    """Check tag, challenge slots and replicas; accept the common replica value.

    ``decrypt`` maps the ciphertext to a plaintext of R_p (ideal keys in
    tests, distributed shares in the protocol).
    """
    p = pp.p
    # (1) expected challenge values
    expected = {j: evaluate_mod(prog, [prf.value(lab, j, p) for lab in prog.labels], p) for j in S.indices}
    # (2) tag recomputation; labels never authenticated in this session cannot verify
    if registry is not None and any(lab not in registry for lab in prog.labels):
        return Verdict(False, reason="tag-mismatch")
    if hash_tree_eval(prog, [prf.tag(lab) for lab in prog.labels]) != gamma.tag:
        return Verdict(False, reason="tag-mismatch")
    # (3) decrypt and check the challenge slots
    try:
        plain = decrypt(gamma.ct)
    except (mghe.ShareError, mghe.MissingKeyError, mghe.RosterError):
        return Verdict(False, reason="decryption-failure")
    slots = tuple(mghe.decode_slots(pp, plain)[:S.lam])
    if any(slots[j] != r for j, r in expected.items()):
        return Verdict(False, reason="challenge-mismatch", slots=slots)
    # (4) replicas must agree
    replicas = {slots[j] for j in range(S.lam) if j not in S}
    if len(replicas) != 1:
        return Verdict(False, reason="replica-mismatch", slots=slots)
    return Verdict(True, value=replicas.pop(), slots=slots)
