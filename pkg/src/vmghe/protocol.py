"""Deterministic in-process simulation of the multiparty protocol.

Parties talk over a reliable, ordered broadcast channel that is modeled by
the transcript itself: every message is appended to the transcript and all
later computation reads payload bytes back from it, so a transcript fully
determines the derived public state.  Rounds are lock-step.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from typing import Callable, Mapping, Sequence

import numpy as np

from . import authenticator as am
from . import mghe, wire
from .presets import get_preset
from .ring import Sampler

TRANSCRIPT_FORMAT = "vmghe-transcript/1"
SERVER = "server"


class ProtocolError(RuntimeError):
    pass


class SetGenDivergence(ProtocolError):
    pass


class DecryptionTimeout(ProtocolError, mghe.ShareError):
    pass


class ReplayMismatch(ProtocolError):
    pass


# -- configuration ---------------------------------------------------------

def _check_name(kind: str, name: str) -> None:
    if not name or any(ch.isspace() for ch in name) or name == SERVER:
        raise ValueError(f"invalid {kind} id {name!r}")


@dataclasses.dataclass(frozen=True)
class SessionConfig:
    groups: tuple[tuple[str, tuple[str, ...]], ...]
    preset: str = "TEST-M"
    mode: str = "crs"
    lam: int | None = None
    seed: int = 0

    def __post_init__(self):
        ids = [g for g, _ in self.groups]
        if not ids:
            raise ValueError("session without groups")
        if len(set(ids)) != len(ids):
            raise ValueError("group ids must be unique")
        seen: set[str] = set()
        for g, roster in self.groups:
            _check_name("group", g)
            if not roster:
                raise ValueError(f"group {g!r} has an empty roster")
            for pid in roster:
                _check_name("party", pid)
                if pid in seen:
                    raise ValueError(f"duplicate party id {pid!r}")
                seen.add(pid)
        if self.mode not in mghe.MODES:
            raise ValueError(f"unknown mode {self.mode!r}")

    @classmethod
    def make(cls, groups: Mapping[str, Sequence[str]], **kw) -> "SessionConfig":
        return cls(tuple((g, tuple(r)) for g, r in groups.items()), **kw)

    @property
    def rosters(self) -> dict[str, tuple[str, ...]]:
        return dict(self.groups)

    @property
    def group_ids(self) -> tuple[str, ...]:
        return tuple(g for g, _ in self.groups)

    def members(self) -> list[tuple[str, str]]:
        """(party, group) pairs in canonical order."""
        return [(pid, g) for g, roster in self.groups for pid in roster]

    def to_dict(self) -> dict:
        return {"groups": {g: list(r) for g, r in self.groups}, "preset": self.preset,
                "mode": self.mode, "lambda": self.lam, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SessionConfig":
        return cls.make(d["groups"], preset=d["preset"], mode=d["mode"], lam=d.get("lambda"), seed=d["seed"])


# -- transcripts -----------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class Message:
    round: int
    sender: str
    kind: str
    payload: bytes


class Transcript:
    """Ordered broadcast log, exportable as one text record per line."""

    def __init__(self, meta: Mapping | None = None):
        self.meta = dict(meta or {})
        self.records: list[Message] = []

    def append(self, msg: Message) -> None:
        self.records.append(msg)

    def round_messages(self, rnd: int, kind: str | None = None) -> list[Message]:
        return [m for m in self.records if m.round == rnd and (kind is None or m.kind == kind)]

    def rounds(self) -> list[int]:
        return sorted({m.round for m in self.records})

    def dumps(self) -> str:
        lines = [TRANSCRIPT_FORMAT + " " + json.dumps(self.meta, sort_keys=True, separators=(",", ":"))]
        lines += [f"{m.round} {m.sender} {m.kind} {m.payload.hex()}" for m in self.records]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Transcript":
        lines = text.splitlines()
        head, _, meta = lines[0].partition(" ")
        if head != TRANSCRIPT_FORMAT:
            raise ValueError(f"not a transcript ({head!r})")
        t = cls(json.loads(meta))
        for line in lines[1:]:
            rnd, sender, kind, payload = line.split(" ")
            t.append(Message(int(rnd), sender, kind, bytes.fromhex(payload)))
        return t

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def payload_bytes(self) -> int:
        return sum(len(m.payload) for m in self.records)


# -- parties and sessions --------------------------------------------------

@dataclasses.dataclass(eq=False)
class Party:
    pid: str
    group: str
    sampler: Sampler
    rng: np.random.Generator
    sk: mghe.SecretKey | None = None
    ek: mghe.EncryptionKey | None = None
    inbox: list[Message] = dataclasses.field(default_factory=list)


@dataclasses.dataclass(frozen=True)
class InputSpec:
    label: str
    value: int
    group: str


@dataclasses.dataclass(eq=False)
class ServerView:
    """What a (possibly adversarial) server sees and can use."""

    pp: mghe.PublicParams
    program: am.LabeledProgram
    inputs: list[am.Authenticator]
    keys: Mapping[str, mghe.JointKeys]
    rng: np.random.Generator
    lam: int
    max_depth: int | None = None

    def honest(self, program: am.LabeledProgram | None = None,
               inputs: Sequence[am.Authenticator] | None = None) -> am.Authenticator:
        return am.eval_authenticated(self.pp, program or self.program,
                                     list(inputs if inputs is not None else self.inputs),
                                     self.keys, self.max_depth)


ServerHook = Callable[[ServerView], am.Authenticator]


class Session:
    """Parties, public state and the transcript of one protocol run."""

    def __init__(self, cfg: SessionConfig, meta: Mapping | None = None):
        self.cfg = cfg
        preset = get_preset(cfg.preset)
        if cfg.lam is not None:
            preset = dataclasses.replace(preset, lam=cfg.lam)
        self.pp = mghe.setup(preset, cfg.mode, cfg.seed)
        self.parties = {
            pid: Party(pid, g, Sampler(self.pp.sampler_params, mghe.derived_rng(cfg.seed, "party", pid)),
                       mghe.derived_rng(cfg.seed, "setgen", pid))
            for pid, g in cfg.members()
        }
        self.transcript = Transcript({"config": cfg.to_dict(), "params": self.pp.digest(), **(meta or {})})
        self.round = 0
        self.commons: dict[str, mghe.GroupCommons] = {}
        self.keys: dict[str, mghe.JointKeys] = {}
        self.challenge: am.ChallengeSet | None = None
        self.registry = am.SessionRegistry()
        self.server_rng = mghe.derived_rng(cfg.seed, "server")

    # -- plumbing ---------------------------------------------------------
    @property
    def lam(self) -> int:
        return self.pp.lam

    def leader(self, group: str) -> Party:
        return self.parties[self.cfg.rosters[group][0]]

    def next_round(self) -> int:
        self.round += 1
        return self.round

    def broadcast(self, rnd: int, sender: str, kind: str, payload: bytes) -> None:
        msg = Message(rnd, sender, kind, payload)
        self.transcript.append(msg)
        for party in self.parties.values():
            party.inbox.append(msg)

    def _from(self, rnd: int, kind: str) -> dict[str, bytes]:
        return {m.sender: m.payload for m in self.transcript.round_messages(rnd, kind)}

    # -- key generation ---------------------------------------------------
    def keygen(self) -> dict[str, mghe.JointKeys]:
        pp, cfg = self.pp, self.cfg
        own_a: dict[str, tuple] = {}
        if pp.mode == "crs":
            for g, roster in cfg.groups:
                self.commons[g] = mghe.crs_commons(pp, g, roster)
        else:
            rnd = self.next_round()
            for pid, g in cfg.members():
                coin = mghe.coin_share(pp, self.parties[pid].sampler, pid, g, cfg.group_ids)
                self.broadcast(rnd, pid, "coin", coin.to_bytes())
            coins = {pid: mghe.CoinShare.from_bytes(pp, b) for pid, b in self._from(rnd, "coin").items()}
            for g, roster in cfg.groups:
                self.commons[g] = mghe.aggregate_coins([coins[pid] for pid in roster])
            own_a = {pid: c.a for pid, c in coins.items()}

        rnd = self.next_round()
        for pid, g in cfg.members():
            party = self.parties[pid]
            party.sk, share, party.ek = mghe.keygen_party(pp, party.sampler, pid, g, self.commons[g], own_a.get(pid))
            self.broadcast(rnd, pid, "pk_share", share.to_bytes())
        shares = {pid: mghe.PublicKeyShare.from_bytes(pp, b) for pid, b in self._from(rnd, "pk_share").items()}
        for g, roster in cfg.groups:
            self.keys[g] = mghe.aggregate_group([shares[pid] for pid in roster], pp, self.commons[g])

        if pp.mode == "crs_free":
            self._cross_keys()
        return self.keys

    def _cross_keys(self) -> None:
        pp, cfg = self.pp, self.cfg
        rnd = self.next_round()
        for g in cfg.group_ids:
            self.broadcast(rnd, self.leader(g).pid, "group_public", self.keys[g].public().to_bytes())
        publics = {}
        for payload in self._from(rnd, "group_public").values():
            gp = mghe.GroupPublic.from_bytes(pp, payload)
            publics[gp.group] = gp
        if len(cfg.groups) == 1:
            return
        rnd = self.next_round()
        for pid, g in cfg.members():
            for t in cfg.group_ids:
                if t != g:
                    cs = mghe.keygen_cross_group(pp, self.parties[pid].sampler, self.parties[pid].sk,
                                                 self.commons[g], publics[t])
                    self.broadcast(rnd, pid, "cross_share", cs.to_bytes())
        cross = [mghe.CrossShare.from_bytes(pp, m.payload) for m in self.transcript.round_messages(rnd, "cross_share")]
        for g, roster in cfg.groups:
            per_target = {}
            for t in cfg.group_ids:
                if t != g:
                    picked = [c for c in cross if c.group == g and c.target == t]
                    per_target[t] = mghe.aggregate_cross(picked, self.commons[g])
            self.keys[g] = self.keys[g].with_cross(per_target)

    # -- challenge set ----------------------------------------------------
    def setgen(self, tamper: Callable[[str, str, bytes], bytes] | None = None) -> am.ChallengeSet:
        """Jointly derive S; ``tamper(sender, recipient, payload)`` may alter a message."""
        pp, lam = self.pp, self.lam
        order = [pid for pid, _ in self.cfg.members()]
        local = {pid: am.setgen_local(lam, self.parties[pid].rng) for pid in order}
        rnd = self.next_round()
        for sender in order:
            bits = local[sender].to_bits()
            chunks = [bits[i:i + pp.N] for i in range(0, len(bits), pp.N)]
            for recipient in order:
                if recipient == sender:
                    continue
                w = wire.Writer(wire.TYPE_SETGEN).text(recipient).u32(len(bits)).u32(len(chunks))
                for chunk in chunks:
                    ct = mghe.encrypt(pp, self.parties[recipient].ek, mghe.encode_slots(pp, chunk),
                                      self.parties[sender].sampler)
                    w.blob(ct.to_bytes())
                payload = w.getvalue()
                if tamper is not None:
                    payload = tamper(sender, recipient, payload)
                self.broadcast(rnd, sender, "setgen_share", payload)

        views: dict[str, am.ChallengeSet | None] = {}
        for pid in order:
            views[pid] = self._setgen_view(pid, order, local[pid], rnd)
        rnd = self.next_round()
        for pid in order:
            view = views[pid]
            self.broadcast(rnd, pid, "setgen_confirm", view.digest if view is not None else b"abort")
        confirms = self._from(rnd, "setgen_confirm")
        if len(set(confirms.values())) != 1 or b"abort" in confirms.values():
            groups: dict[bytes, list[str]] = {}
            for pid, d in confirms.items():
                groups.setdefault(d, []).append(pid)
            raise SetGenDivergence("parties derived different challenge sets: "
                                   + "; ".join(f"{d[:4].hex()}: {', '.join(p)}" for d, p in groups.items()))
        self.challenge = views[order[0]]
        return self.challenge

    def _setgen_view(self, pid: str, order: list[str], own: am.SetGenShare, rnd: int) -> am.ChallengeSet | None:
        party = self.parties[pid]
        shares = []
        for sender in order:
            if sender == pid:
                shares.append(own)
                continue
            try:
                shares.append(self._open_setgen(party, sender, rnd))
            except (ValueError, IndexError):
                return None  # undecodable share: this party aborts
        return am.setgen_combine(shares, self.lam)

    def _open_setgen(self, party: Party, sender: str, rnd: int) -> am.SetGenShare:
        pp = self.pp
        for m in self.transcript.round_messages(rnd, "setgen_share"):
            if m.sender != sender:
                continue
            r = wire.Reader(m.payload, wire.TYPE_SETGEN)
            if r.text() != party.pid:
                continue
            n_bits, n_chunks = r.u32(), r.u32()
            bits: list[int] = []
            for _ in range(n_chunks):
                ct = mghe.MultigroupCiphertext.from_bytes(pp, r.blob())
                plain = mghe.ideal_decrypt(pp, ct, {party.pid: party.sk.s})
                bits += mghe.decode_slots(pp, plain)
            r.done()
            return am.SetGenShare.from_bits(bits[:n_bits], self.lam)
        raise ValueError(f"no share from {sender} for {party.pid}")

    # -- authenticated evaluation ------------------------------------------
    def authenticate(self, inputs: Sequence[InputSpec]) -> dict[bytes, am.Authenticator]:
        pp, S = self.pp, self._require_challenge()
        prf = S.prf()
        rnd = self.next_round()
        for spec in inputs:
            if spec.group not in self.keys:
                raise ProtocolError(f"input {spec.label!r} names unknown group {spec.group!r}")
            leader = self.leader(spec.group)
            gamma = am.auth(pp, spec.value, spec.label, self.keys[spec.group].jek, S, prf,
                            leader.sampler, self.registry)
            payload = wire.Writer(wire.TYPE_AUTHENTICATOR).text(spec.label).blob(gamma.to_bytes()).getvalue()
            self.broadcast(rnd, leader.pid, "auth", payload)
        out = {}
        for m in self.transcript.round_messages(rnd, "auth"):
            r = wire.Reader(m.payload, wire.TYPE_AUTHENTICATOR)
            label = r.text().encode()
            out[label] = am.Authenticator.from_bytes(pp, r.blob(), am.identity(label))
            r.done()
        return out

    def evaluate(self, program: am.LabeledProgram, gammas: Mapping[bytes, am.Authenticator],
                 tamper: ServerHook | None = None, max_depth: int | None = None) -> am.Authenticator:
        missing = [lab for lab in program.labels if lab not in gammas]
        if missing:
            raise ProtocolError(f"no authenticated input for labels {missing}")
        view = ServerView(self.pp, program, [gammas[lab] for lab in program.labels], self.keys,
                          self.server_rng, self.lam, max_depth)
        result = tamper(view) if tamper is not None else view.honest()
        rnd = self.next_round()
        self.broadcast(rnd, SERVER, "result", result.to_bytes())
        return am.Authenticator.from_bytes(self.pp, self.transcript.round_messages(rnd, "result")[0].payload,
                                           program)

    def run(self, program: am.LabeledProgram, inputs: Sequence[InputSpec],
            tamper: ServerHook | None = None, max_depth: int | None = None) -> am.Authenticator:
        return self.evaluate(program, self.authenticate(inputs), tamper, max_depth)

    def _require_challenge(self) -> am.ChallengeSet:
        if self.challenge is None:
            raise ProtocolError("challenge set not generated yet")
        return self.challenge

    # -- distributed decryption -------------------------------------------
    def decrypt(self, ct: mghe.MultigroupCiphertext, withhold: Sequence[str] = ()):
        """Two broadcast rounds (party shares, group sums), one if every group is a singleton."""
        pp, rosters = self.pp, self.cfg.rosters
        unknown = [g for g in ct.roster if g not in rosters]
        if unknown:
            raise mghe.RosterError(f"ciphertext roster has unknown groups {unknown}")
        rnd = self.next_round()
        for g in ct.roster:
            for pid in rosters[g]:
                if pid in withhold:
                    continue
                share = mghe.partial_decrypt(pp, ct, self.parties[pid].sk, self.parties[pid].sampler)
                self.broadcast(rnd, pid, "dec_share", share.to_bytes())
        shares = [mghe.DecryptionShare.from_bytes(pp, m.payload)
                  for m in self.transcript.round_messages(rnd, "dec_share")]
        digest = ct.digest()
        merged = {}
        for g in ct.roster:
            mine = {s.party: s for s in shares if s.group == g and s.ct_digest == digest}
            missing = [pid for pid in rosters[g] if pid not in mine]
            if missing:
                raise DecryptionTimeout(f"round {rnd}: no decryption share from {', '.join(missing)}")
            merged[g] = mghe.merge_group_shares([mine[pid] for pid in rosters[g]])
        if any(len(rosters[g]) > 1 for g in ct.roster):
            rnd = self.next_round()
            for g in ct.roster:
                summed = mghe.DecryptionShare(g, self.leader(g).pid, merged[g], digest)
                self.broadcast(rnd, self.leader(g).pid, "group_dec_share", summed.to_bytes())
            merged = {}
            for m in self.transcript.round_messages(rnd, "group_dec_share"):
                s = mghe.DecryptionShare.from_bytes(pp, m.payload)
                merged[s.group] = s.mu
        return mghe.combine_merged(pp, ct, merged)

    def verify(self, program: am.LabeledProgram, gamma: am.Authenticator,
               decrypt: Callable[[mghe.MultigroupCiphertext], object] | None = None) -> am.Verdict:
        S = self._require_challenge()
        return am.verify(self.pp, program, gamma, S, S.prf(), decrypt or self.decrypt, self.registry)

    # -- simulation-only telemetry ------------------------------------------
    def ideal_keys(self) -> dict[str, object]:
        """Group secrets sum_i s_i; never used by the protocol path."""
        return {g: mghe.ideal_secret([self.parties[pid].sk for pid in roster]) for g, roster in self.cfg.groups}

    def noise_report(self, ct: mghe.MultigroupCiphertext, expected) -> dict:
        e = mghe.noise(self.pp, ct, self.ideal_keys(), expected)
        return {"noise_bits": round(math.log2(max(e, 1)), 2),
                "delta_half_bits": round(math.log2(self.pp.delta / 2), 2),
                "budget_bits": round(mghe.noise_budget_bits(self.pp, e), 2),
                "exhausted": 2 * e >= self.pp.delta}

    def state_digest(self) -> str:
        h = hashlib.sha256(self.pp.to_bytes())
        for g in self.cfg.group_ids:
            if g in self.keys:
                h.update(self.keys[g].public().to_bytes())
        if self.challenge is not None:
            h.update(self.challenge.digest)
        h.update(self.transcript.digest().encode())
        return h.hexdigest()


# -- functional entry points -----------------------------------------------

def run_keygen(cfg: SessionConfig | Session):
    session = cfg if isinstance(cfg, Session) else Session(cfg)
    keys = session.keygen()
    return session.parties, keys, session.transcript


def run_setgen(session: Session, tamper=None):
    return session.setgen(tamper), session.transcript


def run_session(session: Session, program: am.LabeledProgram, inputs: Sequence[InputSpec],
                tamper: ServerHook | None = None):
    return session.run(program, inputs, tamper), session.transcript


def run_distributed_decrypt(session: Session, ct: mghe.MultigroupCiphertext, withhold: Sequence[str] = ()):
    return session.decrypt(ct, withhold), session.transcript


def check_secrecy(transcript: Transcript) -> bool:
    """No record carries secret-key material (type byte or canary)."""
    for m in transcript.records:
        if mghe.SECRET_KEY_CANARY in m.payload:
            return False
        if m.payload[:3] == wire.MAGIC and len(m.payload) > 4 and m.payload[4] == wire.TYPE_SECRET_KEY:
            return False
    return True


# -- scripted server adversaries ---------------------------------------------

def _guess_subset(rng: np.random.Generator, lam: int) -> set[int]:
    return set(int(j) for j in rng.choice(lam, size=lam // 2, replace=False))


def _nonzero(rng: np.random.Generator, p: int) -> int:
    return int(rng.integers(1, p))


def _slot_offset(view: ServerView, gamma: am.Authenticator, offsets: Mapping[int, int]) -> am.Authenticator:
    vec = [offsets.get(j, 0) for j in range(view.lam)]
    return am.Authenticator(mghe.add_plain(view.pp, gamma.ct, mghe.encode_slots(view.pp, vec)),
                            gamma.tag, gamma.program)


def tamper_additive_noise(view: ServerView) -> am.Authenticator:
    """Slot-guessing adversary: add d != 0 to the slots guessed to be replicas."""
    honest = view.honest()
    guess = _guess_subset(view.rng, view.lam)
    d = _nonzero(view.rng, view.pp.p)
    return _slot_offset(view, honest, {j: d for j in range(view.lam) if j not in guess})


def tamper_slot_substitute(view: ServerView) -> am.Authenticator:
    """Overwrite one slot with a different value."""
    honest = view.honest()
    j = int(view.rng.integers(0, view.lam))
    return _slot_offset(view, honest, {j: _nonzero(view.rng, view.pp.p)})


def tamper_wrong_circuit(view: ServerView) -> am.Authenticator:
    """Evaluate f + x_1 instead of f and return its honest-looking result."""
    b = am.ProgramBuilder()
    out = b.add(b.embed(view.program), b.input(view.program.labels[0]))
    other = b.build(out)
    by_label = dict(zip(view.program.labels, view.inputs))
    return view.honest(other, [by_label[lab] for lab in other.labels])


def tamper_stale_label(view: ServerView) -> am.Authenticator:
    """Answer with a result authenticated in an earlier session (old key and S)."""
    pp = view.pp
    stale_rng = np.random.default_rng(int(view.rng.integers(0, 2**63)))
    S = am.setgen_combine([am.setgen_local(view.lam, stale_rng)], view.lam)
    prf = S.prf()
    sampler = Sampler(pp.sampler_params, stale_rng)
    gammas = []
    for lab, honest_in in zip(view.program.labels, view.inputs):
        jek = view.keys[honest_in.ct.roster[0]].jek
        gammas.append(am.auth(pp, int(stale_rng.integers(0, pp.p)), lab, jek, S, prf, sampler))
    return view.honest(inputs=gammas)


def tamper_ciphertext_swap(view: ServerView) -> am.Authenticator:
    """Swap the ciphertexts of the first two inputs, keeping their tags."""
    if len(view.inputs) < 2:
        return tamper_slot_substitute(view)
    a, b = view.inputs[0], view.inputs[1]
    swapped = [am.Authenticator(b.ct, a.tag, a.program), am.Authenticator(a.ct, b.tag, b.program)]
    return view.honest(inputs=swapped + view.inputs[2:])


def tamper_constant_output(view: ServerView) -> am.Authenticator:
    """Replace the result by a fresh encryption of one value in every slot."""
    honest = view.honest()
    pp = view.pp
    group = honest.ct.roster[0]
    c = int(view.rng.integers(0, pp.p))
    sampler = Sampler(pp.sampler_params, view.rng)
    ct = mghe.encrypt(pp, view.keys[group].jek, mghe.encode_slots(pp, [c] * view.lam), sampler)
    return am.Authenticator(ct, honest.tag, honest.program)


TAMPERS: dict[str, ServerHook | None] = {
    "none": None,
    "wrong-circuit": tamper_wrong_circuit,
    "slot-substitute": tamper_slot_substitute,
    "additive-noise": tamper_additive_noise,
    "stale-label": tamper_stale_label,
    "ciphertext-swap": tamper_ciphertext_swap,
    "constant-output": tamper_constant_output,
}


def escape_probability(lam: int) -> float:
    """Chance that a uniformly guessed lam/2-subset equals S."""
    return 1 / math.comb(lam, lam // 2)
