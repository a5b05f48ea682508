"""Scenario files, the end-to-end runner, detection statistics and benchmarks."""

from __future__ import annotations

import configparser
import dataclasses
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as sps

from . import authenticator as am
from . import mghe
from .protocol import TAMPERS, InputSpec, ProtocolError, ReplayMismatch, Session, SessionConfig, Transcript
from .presets import get_preset

REPORT_FORMAT = "vmghe-report/1"
MIN_TRIALS = 30


@dataclasses.dataclass(frozen=True)
class Scenario:
    name: str
    config: SessionConfig
    program: str
    inputs: tuple[InputSpec, ...]
    tamper: str = "none"

    def __post_init__(self):
        if self.tamper not in TAMPERS:
            raise ValueError(f"unknown tamper directive {self.tamper!r}; choose from {', '.join(TAMPERS)}")
        prog = self.parsed()
        labels = {s.label.encode() for s in self.inputs}
        missing = [lab.decode() for lab in prog.labels if lab not in labels]
        if missing:
            raise ValueError(f"no input assignment for {', '.join(missing)}")
        rosters = self.config.rosters
        for s in self.inputs:
            if s.group not in rosters:
                raise ValueError(f"input {s.label!r} assigned to unknown group {s.group!r}")

    def parsed(self) -> am.LabeledProgram:
        return am.parse_program(self.program)

    def replace(self, *, seed: int | None = None, mode: str | None = None, lam: int | None = None,
                preset: str | None = None, tamper: str | None = None) -> "Scenario":
        cfg = self.config
        cfg = dataclasses.replace(cfg, seed=cfg.seed if seed is None else seed, mode=mode or cfg.mode,
                                  lam=cfg.lam if lam is None else lam, preset=preset or cfg.preset)
        return dataclasses.replace(self, config=cfg, tamper=tamper or self.tamper)

    def expected(self) -> int:
        values = {s.label.encode(): s.value for s in self.inputs}
        prog = self.parsed()
        p = get_plain_modulus(self.config.preset)
        return am.evaluate_mod(prog, [values[lab] for lab in prog.labels], p)

    def to_dict(self) -> dict:
        return {"name": self.name, "config": self.config.to_dict(), "program": self.program,
                "inputs": [[s.label, s.value, s.group] for s in self.inputs], "tamper": self.tamper}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scenario":
        return cls(d["name"], SessionConfig.from_dict(d["config"]), d["program"],
                   tuple(InputSpec(lab, int(v), g) for lab, v, g in d["inputs"]), d["tamper"])

    def to_text(self) -> str:
        cfg = self.config
        lines = ["[scenario]", f"name = {self.name}", f"preset = {cfg.preset}", f"mode = {cfg.mode}",
                 f"seed = {cfg.seed}"]
        if cfg.lam is not None:
            lines.append(f"lambda = {cfg.lam}")
        lines += ["", "[groups]"] + [f"{g} = {', '.join(r)}" for g, r in cfg.groups]
        lines += ["", "[program]", f"expr = {self.program}", "", "[inputs]"]
        lines += [f"{s.label} = {s.value} @ {s.group}" for s in self.inputs]
        lines += ["", "[tamper]", f"kind = {self.tamper}", ""]
        return "\n".join(lines)


def get_plain_modulus(preset: str) -> int:
    return get_preset(preset).plain_modulus


def parse_scenario(text: str) -> Scenario:
    cp = configparser.ConfigParser(delimiters=("=",))
    cp.optionxform = str
    cp.read_string(text)
    for section in ("scenario", "groups", "program", "inputs"):
        if not cp.has_section(section):
            raise ValueError(f"scenario lacks a [{section}] section")
    meta = cp["scenario"]
    groups = {g: [p.strip() for p in members.split(",") if p.strip()] for g, members in cp["groups"].items()}
    inputs = []
    for label, spec in cp["inputs"].items():
        value, sep, group = spec.partition("@")
        if not sep:
            raise ValueError(f"input {label!r} must read '<value> @ <group>'")
        inputs.append(InputSpec(label, int(value), group.strip()))
    lam = meta.get("lambda")
    cfg = SessionConfig.make(groups, preset=meta.get("preset", "TEST-M"), mode=meta.get("mode", "crs"),
                             lam=int(lam) if lam else None, seed=meta.getint("seed", 0))
    tamper = cp.get("tamper", "kind", fallback="none")
    return Scenario(meta.get("name", "scenario"), cfg, cp["program"]["expr"], tuple(inputs), tamper)


def bundled_scenarios() -> list[str]:
    root = resources.files("vmghe").joinpath("scenarios")
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def load_scenario(name_or_path: str | Path) -> Scenario:
    path = Path(name_or_path)
    if path.exists():
        return parse_scenario(path.read_text())
    res = resources.files("vmghe").joinpath("scenarios", f"{name_or_path}.ini")
    if res.is_file():
        return parse_scenario(res.read_text())
    raise FileNotFoundError(f"no scenario file or bundled scenario named {name_or_path!r}")


# -- running ---------------------------------------------------------------

@dataclasses.dataclass(eq=False)
class RunResult:
    report: dict
    session: Session
    verdict: am.Verdict | None
    result: am.Authenticator | None
    expected_slots: list[int]
    distributed: object | None = None
    ideal: object | None = None

    @property
    def transcript(self) -> Transcript:
        return self.session.transcript


def expected_slots(session: Session, scn: Scenario) -> list[int]:
    """Plaintext oracle for every slot: f(m) on replicas, f(F(tau, j)) on challenges."""
    prog = scn.parsed()
    S, p = session.challenge, session.pp.p
    prf = S.prf()
    values = {s.label.encode(): s.value for s in scn.inputs}
    out = []
    for j in range(S.lam):
        if j in S:
            xs = [prf.value(lab, j, p) for lab in prog.labels]
        else:
            xs = [values[lab] for lab in prog.labels]
        out.append(am.evaluate_mod(prog, xs, p))
    return out


def run_scenario(scn: Scenario) -> RunResult:
    """keygen -> setgen -> auth -> eval -> distributed decrypt -> verify."""
    session = Session(scn.config, {"scenario": scn.to_dict()})
    pp = session.pp
    prog = scn.parsed()
    timings = {}

    def timed(name, fn, *args, **kw):
        t0 = time.perf_counter()
        out = fn(*args, **kw)
        timings[name] = round((time.perf_counter() - t0) * 1000, 2)
        return out

    timed("keygen", session.keygen)
    timed("setgen", session.setgen)
    gammas = timed("auth", session.authenticate, scn.inputs)
    result = timed("eval", session.evaluate, prog, gammas, TAMPERS[scn.tamper], pp.preset.depth_budget)

    captured = {}

    def distributed(ct):
        captured["m"] = session.decrypt(ct)
        return captured["m"]

    verdict = timed("verify", session.verify, prog, result, distributed)
    exp = expected_slots(session, scn)
    ideal = mghe.ideal_decrypt(pp, result.ct, session.ideal_keys())
    noise = None
    if scn.tamper == "none":
        # slots past lambda carry f on all-zero inputs (nonzero when f has constants)
        pad = am.evaluate_mod(prog, [0] * prog.arity, pp.p)
        noise = session.noise_report(result.ct, mghe.encode_slots(pp, exp + [pad] * (pp.N - len(exp))))
    report = {
        "format": REPORT_FORMAT,
        "kind": "run",
        "scenario": scn.name,
        "preset": scn.config.preset,
        "mode": scn.config.mode,
        "lambda": session.lam,
        "seed": scn.config.seed,
        "tamper": scn.tamper,
        "program": am.format_program(prog),
        "groups": {g: list(r) for g, r in scn.config.groups},
        "roster": list(result.ct.roster),
        "components": len(result.ct.components),
        "verdict": "accept" if verdict.accepted else "reject",
        "reason": verdict.reason,
        "result": verdict.value,
        "expected": scn.expected(),
        "correct": verdict.accepted and verdict.value == scn.expected(),
        "distributed_matches_ideal": captured["m"] == ideal if "m" in captured else None,
        "noise": noise,
        "timings_ms": timings,
        "rounds": len(session.transcript.rounds()),
        "messages": len(session.transcript.records),
        "transcript_digest": session.transcript.digest(),
    }
    return RunResult(report, session, verdict, result, exp, captured.get("m"), ideal)


def replay(text: str) -> Transcript:
    """Re-run the scenario recorded in a transcript and demand identical bytes."""
    recorded = Transcript.loads(text)
    if "scenario" not in recorded.meta:
        raise ReplayMismatch("transcript does not describe its scenario")
    scn = Scenario.from_dict(recorded.meta["scenario"])
    fresh = run_scenario(scn).transcript
    a, b = recorded.dumps().splitlines(), fresh.dumps().splitlines()
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            raise ReplayMismatch(f"transcripts diverge at line {i}")
    if len(a) != len(b):
        raise ReplayMismatch(f"transcript lengths differ ({len(a)} vs {len(b)} lines)")
    return fresh


# -- reports ---------------------------------------------------------------

def dump_report(report: Mapping) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def load_report(text: str) -> dict:
    report = json.loads(text)
    if report.get("format") != REPORT_FORMAT:
        raise ValueError(f"unsupported report format {report.get('format')!r}")
    return report


# -- statistics ------------------------------------------------------------

def wilson_interval(successes: int, trials: int, confidence: float = 0.99) -> tuple[float, float]:
    if trials <= 0:
        raise ValueError("no trials")
    z = float(sps.norm.ppf(0.5 + confidence / 2))
    phat = successes / trials
    denom = 1 + z * z / trials
    centre = (phat + z * z / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def trial_seed(base: int, index: int) -> int:
    return mghe.seed_words(base, "trial", index)[0]


def _trial(args) -> tuple[int, str, str | None]:
    scn_dict, index, base = args
    scn = Scenario.from_dict(scn_dict).replace(seed=trial_seed(base, index))
    try:
        res = run_scenario(scn)
    except ProtocolError as exc:
        return index, "error", type(exc).__name__
    return index, res.report["verdict"], res.report["reason"]


def expected_detection(tamper: str, lam: int) -> float | None:
    if tamper == "none":
        return 0.0
    if tamper == "additive-noise":
        return 1 - 1 / math.comb(lam, lam // 2)
    if tamper in ("wrong-circuit", "stale-label", "slot-substitute"):
        return 1.0
    return None


def run_stats(scn: Scenario, trials: int, jobs: int = 1, base_seed: int | None = None) -> dict:
    """Independent seeded trials of one scenario; rejections are detections."""
    if trials < MIN_TRIALS:
        raise ValueError(f"at least {MIN_TRIALS} trials are needed, got {trials}")
    base = scn.config.seed if base_seed is None else base_seed
    work = [(scn.to_dict(), i, base) for i in range(trials)]
    t0 = time.perf_counter()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_trial, work, chunksize=max(1, trials // (4 * jobs))))
    else:
        outcomes = [_trial(w) for w in work]
    outcomes.sort()
    rejected = sum(v == "reject" for _, v, _ in outcomes)
    errors = sum(v == "error" for _, v, _ in outcomes)
    reasons: dict[str, int] = {}
    for _, v, r in outcomes:
        if v != "accept":
            reasons[r or v] = reasons.get(r or v, 0) + 1
    lam = scn.config.lam or _preset_lam(scn.config.preset)
    completed = trials - errors
    lo, hi = wilson_interval(rejected, completed) if completed else (0.0, 1.0)
    esc_lo, esc_hi = 1 - hi, 1 - lo
    bound = expected_detection(scn.tamper, lam)
    return {
        "format": REPORT_FORMAT,
        "kind": "stats",
        "scenario": scn.name,
        "tamper": scn.tamper,
        "lambda": lam,
        "trials": trials,
        "errors": errors,
        "rejections": rejected,
        "detection_rate": rejected / completed if completed else None,
        "detection_wilson99": [lo, hi],
        "escape_rate": (completed - rejected) / completed if completed else None,
        "escape_wilson99": [esc_lo, esc_hi],
        "expected_detection": bound,
        "consistent": None if bound is None else bool(lo <= bound <= hi),
        "reasons": dict(sorted(reasons.items())),
        "outcomes": [v for _, v, _ in outcomes],
        "elapsed_s": round(time.perf_counter() - t0, 2),
    }


def _preset_lam(preset: str) -> int:
    return get_preset(preset).lam


# -- benchmarks ------------------------------------------------------------

BENCH_OPS = ("setup", "keygen", "setgen", "auth", "eval_add", "eval_mul", "decrypt", "verify")


def run_bench(preset: str, mode: str = "crs", seed: int = 0, repeats: int = 3) -> dict:
    """Wall-clock of the pipeline stages on two 2-party groups (median of ``repeats``)."""
    samples: dict[str, list[float]] = {op: [] for op in BENCH_OPS}
    for rep in range(repeats):
        cfg = SessionConfig.make({"A": ["a1", "a2"], "B": ["b1", "b2"]}, preset=preset, mode=mode, seed=seed + rep)

        def clock(op, fn, *args):
            t0 = time.perf_counter()
            out = fn(*args)
            samples[op].append((time.perf_counter() - t0) * 1000)
            return out

        session = clock("setup", Session, cfg)
        clock("keygen", session.keygen)
        clock("setgen", session.setgen)
        gammas = clock("auth", session.authenticate, [InputSpec("x", 3, "A"), InputSpec("y", 5, "B")])
        pp, keys = session.pp, session.keys
        gx, gy = gammas[b"x"], gammas[b"y"]
        clock("eval_add", mghe.eval_add, gx.ct, gy.ct)
        prod = clock("eval_mul", mghe.eval_mul, pp, gx.ct, gy.ct, keys)
        clock("decrypt", session.decrypt, prod)
        prog = am.parse_program("x * y")
        gamma = am.Authenticator(prod, am.hash_tree_eval(prog, [gx.tag, gy.tag]), prog)
        verdict = clock("verify", session.verify, prog, gamma)
        if not verdict.accepted or verdict.value != 15:
            raise ProtocolError(f"benchmark pipeline produced {verdict}")
    rows = [{"op": op, "ms": round(float(np.median(samples[op])), 3),
             "min_ms": round(min(samples[op]), 3), "max_ms": round(max(samples[op]), 3)} for op in BENCH_OPS]
    return {"format": REPORT_FORMAT, "kind": "bench", "preset": preset, "mode": mode, "repeats": repeats,
            "rows": rows, "total_ms": round(sum(r["ms"] for r in rows), 3)}


# -- random sessions -------------------------------------------------------

def random_program(rng: np.random.Generator, names: Sequence[str], max_mul: int = 4, max_depth: int = 2) -> str:
    """Sum of 1-3 random monomial terms; depth <= max_depth, at most max_mul products."""
    budget = max_mul
    terms = []
    for _ in range(int(rng.integers(1, 4))):
        shape = int(rng.integers(0, 5))
        pick = lambda: names[int(rng.integers(0, len(names)))]
        if shape == 0 or budget == 0:
            terms.append(pick())
        elif shape == 1:
            terms.append(f"{int(rng.integers(1, 50))} * {pick()}")
            budget -= 1
        elif shape == 2 or budget < 2 or max_depth < 2:
            terms.append(f"{pick()} * {pick()}")
            budget -= 1
        elif shape == 3 or budget < 3:
            terms.append(f"({pick()} * {pick()}) * {pick()}")
            budget -= 2
        else:
            terms.append(f"({pick()} * {pick()}) * ({pick()} * {pick()})")
            budget -= 3
    if rng.random() < 0.3:
        terms.append(str(int(rng.integers(0, 100))))
    return " + ".join(terms)


def random_scenario(seed: int, mode: str = "crs", preset: str = "TEST-M", max_groups: int = 3,
                    max_parties: int = 3, shape: str | None = None, lam: int | None = None) -> Scenario:
    """A random session: n <= max_groups groups of <= max_parties parties.

    ``shape`` pins the specializations: ``mphe`` (one group) or ``mkhe``
    (all singleton groups).
    """
    rng = mghe.derived_rng("random-scenario", seed)
    if shape == "mphe":
        n_groups, sizes = 1, [int(rng.integers(2, max_parties + 1))]
    elif shape == "mkhe":
        n_groups = int(rng.integers(2, max_groups + 1))
        sizes = [1] * n_groups
    else:
        n_groups = int(rng.integers(1, max_groups + 1))
        sizes = [int(rng.integers(1, max_parties + 1)) for _ in range(n_groups)]
    groups = {f"G{g}": [f"p{g}{i}" for i in range(sizes[g])] for g in range(n_groups)}
    p = get_plain_modulus(preset)
    names, inputs = [], []
    for g in range(n_groups):
        for t in range(int(rng.integers(1, 3))):
            name = f"x{g}{t}"
            names.append(name)
            inputs.append(InputSpec(name, int(rng.integers(0, p)), f"G{g}"))
    program = random_program(rng, names)
    used = set(am.parse_program(program).labels)
    inputs = [s for s in inputs if s.label.encode() in used]
    cfg = SessionConfig.make(groups, preset=preset, mode=mode, lam=lam, seed=seed)
    return Scenario(f"random-{seed}", cfg, program, tuple(inputs))

