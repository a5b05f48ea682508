"""Parameter presets loaded from a plain-text (INI) file."""

from __future__ import annotations

import configparser
import dataclasses
from importlib import resources
from pathlib import Path


@dataclasses.dataclass(frozen=True)
class Preset:
    name: str
    ring_degree: int
    primes: tuple[int, ...]
    partition: tuple[int, ...]
    ext_primes: tuple[int, ...]
    ext_partition: tuple[int, ...]
    plain_modulus: int
    sigma: float
    smudge_sigma: float
    lam: int
    depth_budget: int = 1


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(",", " ").split())


def parse_presets(text: str) -> dict[str, Preset]:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    out = {}
    for name in cp.sections():
        sec = cp[name]
        try:
            out[name] = Preset(
                name=name,
                ring_degree=sec.getint("ring_degree"),
                primes=_ints(sec["primes"]),
                partition=_ints(sec["partition"]),
                ext_primes=_ints(sec["ext_primes"]),
                ext_partition=_ints(sec["ext_partition"]),
                plain_modulus=sec.getint("plain_modulus"),
                sigma=sec.getfloat("sigma"),
                smudge_sigma=sec.getfloat("smudge_sigma"),
                lam=sec.getint("lambda"),
                depth_budget=sec.getint("depth_budget", fallback=1),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"preset {name!r} is incomplete or malformed: {exc}") from exc
    return out


def load_presets(path: str | Path | None = None) -> dict[str, Preset]:
    if path is None:
        text = resources.files("vmghe").joinpath("data/presets.ini").read_text()
    else:
        text = Path(path).read_text()
    return parse_presets(text)


PRESETS = load_presets()


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}") from None
