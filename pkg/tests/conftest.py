import numpy as np
import pytest
from hypothesis import settings

from vmghe import mghe
from vmghe.ring import Sampler

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def build_keys(pp, groups, seed=0):
    """Run key generation directly (no transcript) for unit tests.

    Returns (joint keys per group, secret keys per party, ideal group secrets).
    """
    samplers = {pid: Sampler(pp.sampler_params, mghe.derived_rng(seed, "test-party", pid))
                for roster in groups.values() for pid in roster}
    own_a = {}
    if pp.mode == "crs":
        commons = {g: mghe.crs_commons(pp, g, roster) for g, roster in groups.items()}
    else:
        commons = {}
        for g, roster in groups.items():
            coins = [mghe.coin_share(pp, samplers[pid], pid, g, list(groups)) for pid in roster]
            commons[g] = mghe.aggregate_coins(coins)
            own_a.update({c.party: c.a for c in coins})
    keys, sks, shares = {}, {}, {}
    for g, roster in groups.items():
        shares[g] = []
        for pid in roster:
            sk, share, _ = mghe.keygen_party(pp, samplers[pid], pid, g, commons[g], own_a.get(pid))
            sks[pid] = sk
            shares[g].append(share)
        keys[g] = mghe.aggregate_group(shares[g], pp, commons[g])
    if pp.mode == "crs_free":
        publics = {g: k.public() for g, k in keys.items()}
        for g, roster in groups.items():
            cross = {}
            for t in groups:
                if t != g:
                    cs = [mghe.keygen_cross_group(pp, samplers[pid], sks[pid], commons[g], publics[t]) for pid in roster]
                    cross[t] = mghe.aggregate_cross(cs, commons[g])
            keys[g] = keys[g].with_cross(cross)
    jsk = {g: mghe.ideal_secret([sks[pid] for pid in roster]) for g, roster in groups.items()}
    return keys, sks, jsk


@pytest.fixture
def keyring():
    return build_keys


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
