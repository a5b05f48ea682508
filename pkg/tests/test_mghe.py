import dataclasses

import numpy as np
import pytest

from vmghe import mghe
from vmghe.presets import get_preset
from vmghe.ring import RingElement, Sampler, SamplerParams, infinity_norm, to_bigint

NOISELESS = SamplerParams(sigma=0.0, smudge_sigma=0.0)


def negacyclic_mod(a, b, p):
    n = len(a)
    out = [0] * n
    for i in range(n):
        for j in range(n):
            k = i + j
            sign = 1 if k < n else -1
            out[k % n] += sign * a[i] * b[j]
    return [x % p for x in out]


def random_plain(pp, rng):
    return [int(x) for x in rng.integers(0, pp.p, size=pp.N)]


def err_bound(pp):
    return pp.sampler_params.error_bound()


# -- setup ------------------------------------------------------------------

def test_setup_echoes_preset():
    pp = mghe.setup("TEST-S")
    pre = get_preset("TEST-S")
    assert pp.q == 131041 * 131009 * 130817
    assert pp.q_ext == 130657 * 130369 * 130337
    assert pp.p == pre.plain_modulus and pp.delta == pp.q // pp.p
    assert pp.k == 3 and pp.k_star == 6 and len(pp.crs) == pp.k_star


def test_setup_same_seed_same_crs():
    a = mghe.setup("TEST-S", seed=9).crs
    b = mghe.setup("TEST-S", seed=9).crs
    c = mghe.setup("TEST-S", seed=10).crs
    assert all(x == y for x, y in zip(a, b))
    assert any(x != y for x, y in zip(a, c))


def test_setup_crs_free_has_no_shared_vector():
    pp = mghe.setup("TEST-S", "crs_free")
    assert pp.crs is None
    with pytest.raises(mghe.IncompatibleParams):
        pp.relin_mask("alice")


def test_setup_rejects_incompatible_presets():
    pre = get_preset("TEST-S")
    with pytest.raises(mghe.IncompatibleParams):
        mghe.setup(dataclasses.replace(pre, plain_modulus=101))          # not 1 mod 2N
    with pytest.raises(mghe.IncompatibleParams):
        mghe.setup(dataclasses.replace(pre, ext_primes=(131041, 130369), ext_partition=(0, 1, 2, 3, 4, 5)))
    with pytest.raises(ValueError):
        mghe.setup(pre, mode="trusted")


def test_scaled_extended_gadget():
    pp = mghe.setup("TEST-S")
    for gs, g in zip(pp.scaled_ext_gadget, pp.ext_gadget.components):
        want = (2 * pp.p * g + pp.q_ext) // (2 * pp.q_ext)
        assert to_bigint(gs)[0] % pp.q == want % pp.q


# -- key generation -----------------------------------------------------------

def test_noiseless_public_key_is_exact():
    pp = mghe.setup("TEST-S", sampler_params=NOISELESS)
    commons = mghe.crs_commons(pp, "G", ["a"])
    sk, share, ek, r = mghe.keygen_party(pp, Sampler(NOISELESS, 1), "a", "G", commons, return_randomness=True)
    for bk, ak in zip(share.b, pp.crs):
        assert bk == -(sk.s * ak)
    for v1, v0, g in zip(share.v1, share.v0, pp.gadget.components):
        assert v1 == -(sk.s * v0) - r.scale(g)
    for v2, ak, gs in zip(share.v2, pp.crs, pp.scaled_ext_gadget):
        assert v2 == -(r * ak) + sk.s * gs
    assert ek.b0 == share.b[0] and ek.a0 == pp.crs[0]


@pytest.mark.parametrize("mode", mghe.MODES)
def test_share_invariants(mode):
    pp = mghe.setup("TEST-S", mode, seed=3)
    B = err_bound(pp)
    for t in range(100):
        sampler = Sampler(pp.sampler_params, t)
        if mode == "crs":
            commons, own_a = mghe.crs_commons(pp, "G", ["a"]), None
        else:
            coin = mghe.coin_share(pp, sampler, "a", "G", ["G"])
            commons, own_a = mghe.aggregate_coins([coin]), coin.a
        sk, share, _, r = mghe.keygen_party(pp, sampler, "a", "G", commons, own_a, return_randomness=True)
        assert set(to_bigint(sk.s)) <= {-1, 0, 1}
        nu0 = commons.nu0["G"]
        for bk, ak in zip(share.b, commons.alpha):
            assert infinity_norm(bk + sk.s * ak) <= B
        for v1, n0, g in zip(share.v1, nu0, pp.gadget.components):
            assert infinity_norm(v1 + sk.s * n0 + r.scale(g)) <= B
        for v2, ak, gs in zip(share.v2, commons.alpha, pp.scaled_ext_gadget):
            assert infinity_norm(v2 + r * ak - sk.s * gs) <= B


def test_crs_free_parties_have_distinct_a():
    pp = mghe.setup("TEST-S", "crs_free")
    c1 = mghe.coin_share(pp, Sampler(pp.sampler_params, 1), "a", "G", ["G"])
    c2 = mghe.coin_share(pp, Sampler(pp.sampler_params, 2), "b", "G", ["G"])
    assert c1.a[0] != c2.a[0]


def test_keygen_mode_mismatch():
    pp = mghe.setup("TEST-S", "crs")
    commons = mghe.crs_commons(pp, "G", ["a"])
    with pytest.raises(mghe.IncompatibleParams):
        mghe.keygen_party(pp, Sampler(pp.sampler_params, 1), "a", "G", commons, own_a=pp.crs)


def _shares(pp, roster, seed, group="G"):
    commons = mghe.crs_commons(pp, group, roster)
    out, rs = [], []
    for i, pid in enumerate(roster):
        sk, share, _, r = mghe.keygen_party(pp, Sampler(pp.sampler_params, seed * 100 + i), pid, group,
                                            commons, return_randomness=True)
        out.append((sk, share))
        rs.append(r)
    return commons, out, rs


def test_singleton_group_key_is_party_key():
    pp = mghe.setup("TEST-S")
    commons, [(sk, share)], _ = _shares(pp, ["a"], 1)
    jk = mghe.aggregate_group([share], pp, commons)
    assert all(x == y for x, y in zip(jk.beta, share.b))
    assert all(x == y for x, y in zip(jk.nu1, share.v1))
    assert all(x == y for x, y in zip(jk.nu2, share.v2))


def test_two_party_beta_is_sum():
    pp = mghe.setup("TEST-S")
    commons, pairs, _ = _shares(pp, ["a", "b"], 2)
    jk = mghe.aggregate_group([sh for _, sh in pairs], pp, commons)
    assert jk.beta[0] == pairs[0][1].b[0] + pairs[1][1].b[0]


def test_joint_key_near_linearity():
    pp = mghe.setup("TEST-S", seed=4)
    rng = np.random.default_rng(0)
    for trial in range(50):
        roster = [f"p{i}" for i in range(int(rng.integers(1, 4)))]
        commons, pairs, rs = _shares(pp, roster, trial)
        jk = mghe.aggregate_group([sh for _, sh in pairs], pp, commons)
        jsk = mghe.ideal_secret([sk for sk, _ in pairs])
        r = rs[0]
        for extra in rs[1:]:
            r = r + extra
        bound = len(roster) * err_bound(pp)
        assert max(infinity_norm(b + jsk * a) for b, a in zip(jk.beta, jk.alpha)) <= bound
        assert max(infinity_norm(v1 + jsk * v0 + r.scale(g))
                   for v1, v0, g in zip(jk.nu1, jk.nu0, pp.gadget.components)) <= bound
        assert max(infinity_norm(v2 + r * a - jsk * gs)
                   for v2, a, gs in zip(jk.nu2, jk.alpha, pp.scaled_ext_gadget)) <= bound


def test_aggregate_errors():
    pp = mghe.setup("TEST-S")
    commons, pairs, _ = _shares(pp, ["a", "b"], 5)
    with pytest.raises(ValueError):
        mghe.aggregate_group([], pp, commons)
    with pytest.raises(ValueError):
        mghe.aggregate_group([pairs[0][1], pairs[0][1]], pp, commons)
    mixed = dataclasses.replace(pairs[1][1], a=pp.crs)
    with pytest.raises(mghe.IncompatibleParams):
        mghe.aggregate_group([pairs[0][1], mixed], pp, commons)
    with pytest.raises(ValueError):
        mghe.aggregate_group([pairs[0][1]], pp, commons)  # masks do not add up without b


def test_cross_keys_absent_with_one_group(keyring):
    pp = mghe.setup("TEST-S", "crs_free")
    keys, _, _ = keyring(pp, {"G": ["a", "b"]})
    assert dict(keys["G"].cross) == {}
    with pytest.raises(mghe.MissingKeyError):
        keys["G"].relin_for("H")


def test_cross_key_noiseless_relation():
    pp = mghe.setup("TEST-S", "crs_free", sampler_params=NOISELESS)
    groups = {"G": ["a"], "H": ["b"]}
    samplers = {pid: Sampler(NOISELESS, i) for i, pid in enumerate(["a", "b"])}
    coins = {g: [mghe.coin_share(pp, samplers[r[0]], r[0], g, list(groups))] for g, r in groups.items()}
    commons = {g: mghe.aggregate_coins(c) for g, c in coins.items()}
    sks, keys = {}, {}
    for g, [pid] in groups.items():
        sk, share, _ = mghe.keygen_party(pp, samplers[pid], pid, g, commons[g], coins[g][0].a)
        sks[pid], keys[g] = sk, mghe.aggregate_group([share], pp, commons[g])
    cs, r = mghe.keygen_cross_group(pp, samplers["a"], sks["a"], commons["G"], keys["H"].public(),
                                    return_randomness=True)
    s = sks["a"].s
    for v1, v0, g in zip(cs.v1, commons["G"].nu0["H"], pp.gadget.components):
        assert v1 == -(s * v0) - r.scale(g)
    for v2, alpha, gs in zip(cs.v2, keys["H"].alpha, pp.scaled_ext_gadget):
        assert v2 == -(r * alpha) + s * gs


def test_cross_key_errors(keyring):
    pp = mghe.setup("TEST-S", "crs_free")
    keys, sks, _ = keyring(pp, {"G": ["a"], "H": ["b"]})
    commons = mghe.aggregate_coins([mghe.coin_share(pp, Sampler(pp.sampler_params, 0), "a", "G", ["G", "H"])])
    with pytest.raises(ValueError):
        mghe.keygen_cross_group(pp, Sampler(pp.sampler_params, 0), sks["a"], commons, keys["G"].public())
    stranger = dataclasses.replace(keys["H"].public(), group="Z")
    with pytest.raises(mghe.MissingKeyError):
        mghe.keygen_cross_group(pp, Sampler(pp.sampler_params, 0), sks["a"], commons, stranger)
    crs_pp = mghe.setup("TEST-S", "crs")
    with pytest.raises(mghe.IncompatibleParams):
        mghe.keygen_cross_group(crs_pp, Sampler(pp.sampler_params, 0), sks["a"], commons, keys["H"].public())


# -- encryption and decryption ----------------------------------------------

def test_noiseless_zero_key_encryption_is_scaled_plaintext():
    pp = mghe.setup("TEST-S", sampler_params=NOISELESS)
    zero = RingElement.zero(pp.ctx)
    m = list(range(16))
    ct = mghe.encrypt(pp, mghe.EncryptionKey("G", zero, zero), m, Sampler(NOISELESS, 1))
    assert ct.components[1].is_zero()
    assert to_bigint(ct.components[0]) == [pp.delta * int(x if x <= pp.p // 2 else x - pp.p) for x in m]
    assert mghe.plain_ints(mghe.ideal_decrypt(pp, ct, {"G": RingElement.zero(pp.ctx)})) == m


@pytest.mark.parametrize("mode", mghe.MODES)
def test_encrypt_roundtrip(keyring, mode):
    pp = mghe.setup("TEST-M", mode, seed=2)
    keys, _, jsk = keyring(pp, {"G": ["a", "b"]})
    sampler = Sampler(pp.sampler_params, 11)
    rng = np.random.default_rng(3)
    for _ in range(100):
        m = random_plain(pp, rng)
        ct = mghe.encrypt(pp, keys["G"].jek, m, sampler)
        assert mghe.plain_ints(mghe.ideal_decrypt(pp, ct, jsk)) == m


def test_encryption_is_probabilistic(keyring):
    pp = mghe.setup("TEST-S")
    keys, _, _ = keyring(pp, {"G": ["a"]})
    sampler = Sampler(pp.sampler_params, 1)
    c1 = mghe.encrypt(pp, keys["G"].jek, [5], sampler)
    c2 = mghe.encrypt(pp, keys["G"].jek, [5], sampler)
    assert c1.components[0] != c2.components[0]


def test_encrypt_rejects_foreign_plaintext(keyring):
    pp = mghe.setup("TEST-S")
    keys, _, _ = keyring(pp, {"G": ["a"]})
    with pytest.raises(ValueError):
        mghe.encrypt(pp, keys["G"].jek, RingElement.zero(pp.ctx), Sampler(pp.sampler_params, 1))
    with pytest.raises(ValueError):
        mghe.encrypt(pp, keys["G"].jek, [1] * 17, Sampler(pp.sampler_params, 1))


def test_zero_ciphertext_decrypts_to_zero():
    pp = mghe.setup("TEST-S")
    z = RingElement.zero(pp.ctx)
    ct = mghe.MultigroupCiphertext((z, z, z), ("A", "B"))
    assert mghe.plain_ints(mghe.ideal_decrypt(pp, ct, {"A": z, "B": z})) == [0] * 16


def test_ideal_decrypt_needs_every_key():
    pp = mghe.setup("TEST-S")
    z = RingElement.zero(pp.ctx)
    with pytest.raises(mghe.MissingKeyError):
        mghe.ideal_decrypt(pp, mghe.MultigroupCiphertext((z, z, z), ("A", "B")), {"A": z})


# -- expansion and addition --------------------------------------------------

def _fresh(pp, keys, group, m, seed):
    return mghe.encrypt(pp, keys[group].jek, m, Sampler(pp.sampler_params, seed))


def test_expand_identity_and_layout(keyring):
    pp = mghe.setup("TEST-S")
    keys, _, jsk = keyring(pp, {"B": ["b"]})
    ct = _fresh(pp, keys, "B", [7], 1)
    assert mghe.expand(ct, 1, ["B"]).components == ct.components
    big = mghe.expand(ct, 2, ["A", "B", "C"])
    c0, c1, c2, c3 = big.components
    assert c0 == ct.components[0] and c2 == ct.components[1]
    assert c1.is_zero() and c3.is_zero()
    z = RingElement.zero(pp.ctx)
    dec = mghe.ideal_decrypt(pp, big, {"A": z, "B": jsk["B"], "C": z})
    assert dec == mghe.ideal_decrypt(pp, ct, jsk)


def test_expand_errors(keyring):
    pp = mghe.setup("TEST-S")
    keys, _, _ = keyring(pp, {"B": ["b"]})
    ct = _fresh(pp, keys, "B", [7], 1)
    with pytest.raises(mghe.RosterError):
        mghe.expand(ct, 0, ["B"])
    with pytest.raises(mghe.RosterError):
        mghe.expand(ct, 4, ["A", "B", "C"])
    with pytest.raises(mghe.RosterError):
        mghe.expand(ct, 1, ["A", "B"])


def test_eval_add(keyring):
    pp = mghe.setup("TEST-M", seed=1)
    keys, _, jsk = keyring(pp, {"A": ["a1", "a2"], "B": ["b1"]})
    rng = np.random.default_rng(8)
    m1, m2, m3 = (random_plain(pp, rng) for _ in range(3))
    c1, c2, c3 = _fresh(pp, keys, "A", m1, 1), _fresh(pp, keys, "A", m2, 2), _fresh(pp, keys, "B", m3, 3)
    zero = mghe.MultigroupCiphertext((RingElement.zero(pp.ctx),) * 2, ("A",))
    assert mghe.eval_add(c1, zero).components == c1.components
    same = mghe.eval_add(c1, c2)
    assert mghe.plain_ints(mghe.ideal_decrypt(pp, same, jsk)) == [(x + y) % pp.p for x, y in zip(m1, m2)]
    mixed = mghe.eval_add(c1, c3)
    assert mixed.roster == ("A", "B")
    assert mghe.plain_ints(mghe.ideal_decrypt(pp, mixed, jsk)) == [(x + y) % pp.p for x, y in zip(m1, m3)]


def test_plain_operations(keyring):
    pp = mghe.setup("TEST-M", seed=1)
    keys, _, jsk = keyring(pp, {"A": ["a1"]})
    rng = np.random.default_rng(9)
    m, w = random_plain(pp, rng), random_plain(pp, rng)
    ct = _fresh(pp, keys, "A", m, 1)
    dec = lambda c: mghe.plain_ints(mghe.ideal_decrypt(pp, c, jsk))
    assert dec(mghe.add_plain(pp, ct, w)) == [(x + y) % pp.p for x, y in zip(m, w)]
    assert dec(mghe.mul_scalar(pp, ct, 1234)) == [x * 1234 % pp.p for x in m]
    assert dec(mghe.mul_plain(pp, ct, w)) == negacyclic_mod(m, w, pp.p)
    assert dec(mghe.eval_sub(ct, ct)) == [0] * pp.N


def test_slot_encoding_is_componentwise():
    pp = mghe.setup("TEST-M")
    rng = np.random.default_rng(2)
    a, b = random_plain(pp, rng), random_plain(pp, rng)
    ea, eb = mghe.encode_slots(pp, a), mghe.encode_slots(pp, b)
    assert mghe.decode_slots(pp, ea * eb) == [x * y % pp.p for x, y in zip(a, b)]
    assert mghe.decode_slots(pp, ea + eb) == [(x + y) % pp.p for x, y in zip(a, b)]
    assert mghe.decode_slots(pp, mghe.plaintext(pp, [5])) == [5] * pp.N
    with pytest.raises(ValueError):
        mghe.encode_slots(pp, [0] * (pp.N + 1))


# -- multiplication -------------------------------------------------------------

@pytest.mark.parametrize("mode", mghe.MODES)
def test_mul_by_zero(keyring, mode):
    pp = mghe.setup("TEST-M", mode, seed=5)
    keys, _, jsk = keyring(pp, {"A": ["a"], "B": ["b"]})
    rng = np.random.default_rng(1)
    c0 = _fresh(pp, keys, "A", [0] * pp.N, 1)
    c = _fresh(pp, keys, "B", random_plain(pp, rng), 2)
    assert mghe.plain_ints(mghe.ideal_decrypt(pp, mghe.eval_mul(pp, c0, c, keys), jsk)) == [0] * pp.N


@pytest.mark.parametrize("mode", mghe.MODES)
def test_two_times_three(keyring, mode):
    pp = mghe.setup("TEST-M", mode, seed=6)
    keys, _, jsk = keyring(pp, {"A": ["a"]})
    prod = mghe.eval_mul(pp, _fresh(pp, keys, "A", [2], 1), _fresh(pp, keys, "A", [3], 2), keys)
    assert mghe.plain_ints(mghe.ideal_decrypt(pp, prod, jsk)) == [6] + [0] * (pp.N - 1)


@pytest.mark.parametrize("mode", mghe.MODES)
def test_product_two_groups_two_parties(keyring, mode):
    pp = mghe.setup("TEST-M", mode, seed=7)
    keys, _, jsk = keyring(pp, {"A": ["a1", "a2"], "B": ["b1", "b2"]})
    rng = np.random.default_rng(4)
    for t in range(3):
        m1, m2 = random_plain(pp, rng), random_plain(pp, rng)
        c1, c2 = _fresh(pp, keys, "A", m1, 10 + t), _fresh(pp, keys, "B", m2, 20 + t)
        prod = mghe.eval_mul(pp, c1, c2, keys)
        want = negacyclic_mod(m1, m2, pp.p)
        assert prod.roster == ("A", "B") and len(prod.components) == 3
        assert mghe.plain_ints(mghe.ideal_decrypt(pp, prod, jsk)) == want
        assert 2 * mghe.noise(pp, prod, jsk, want) < pp.delta


@pytest.mark.parametrize("mode", mghe.MODES)
def test_depth_two_three_groups(keyring, mode):
    pp = mghe.setup("TEST-M", mode, seed=8)
    keys, _, jsk = keyring(pp, {"A": ["a1", "a2"], "B": ["b1"], "C": ["c1", "c2", "c3"]})
    x, y, z = (mghe.encode_slots(pp, [v] * 8) for v in (11, 22, 33))
    cx, cy, cz = (_fresh(pp, keys, g, m, i) for i, (g, m) in enumerate(zip("ABC", (x, y, z))))
    out = mghe.eval_mul(pp, mghe.eval_mul(pp, cx, cy, keys), cz, keys)
    assert mghe.decode_slots(pp, mghe.ideal_decrypt(pp, out, jsk))[:8] == [11 * 22 * 33 % pp.p] * 8
    assert mghe.noise_budget_bits(pp, mghe.noise(pp, out, jsk, x * y * z)) > 10


def test_mul_needs_keys_for_every_group(keyring):
    pp = mghe.setup("TEST-S")
    keys, _, _ = keyring(pp, {"A": ["a"], "B": ["b"]})
    c1, c2 = _fresh(pp, keys, "A", [1], 1), _fresh(pp, keys, "B", [1], 2)
    with pytest.raises(mghe.MissingKeyError):
        mghe.eval_mul(pp, c1, c2, {"A": keys["A"]})


def test_crsfree_product_requires_cross_keys(keyring):
    pp = mghe.setup("TEST-S", "crs_free")
    keys, _, _ = keyring(pp, {"A": ["a"], "B": ["b"]})
    stripped = {g: k.with_cross({}) for g, k in keys.items()}
    c1, c2 = _fresh(pp, keys, "A", [1], 1), _fresh(pp, keys, "B", [1], 2)
    with pytest.raises(mghe.MissingKeyError):
        mghe.eval_mul_crsfree(pp, c1, c2, stripped)
    with pytest.raises(mghe.IncompatibleParams):
        mghe.eval_mul_crsfree(mghe.setup("TEST-S"), c1, c2, keys)


def test_test_s_supports_depth_one(keyring):
    pp = mghe.setup("TEST-S", seed=2)
    keys, _, jsk = keyring(pp, {"A": ["a"], "B": ["b"]})
    rng = np.random.default_rng(6)
    for t in range(10):
        m1, m2 = random_plain(pp, rng), random_plain(pp, rng)
        prod = mghe.eval_mul(pp, _fresh(pp, keys, "A", m1, t), _fresh(pp, keys, "B", m2, 50 + t), keys)
        assert mghe.plain_ints(mghe.ideal_decrypt(pp, prod, jsk)) == negacyclic_mod(m1, m2, pp.p)


# -- distributed decryption ---------------------------------------------------

def _all_shares(pp, ct, sks, groups, seed):
    sampler = Sampler(pp.sampler_params, seed)
    return [mghe.partial_decrypt(pp, ct, sks[pid], sampler) for g in ct.roster for pid in groups[g]]


def test_single_party_noiseless_shares_equal_ideal(keyring):
    pp = mghe.setup("TEST-S", sampler_params=SamplerParams(smudge_sigma=0.0))
    groups = {"G": ["a"]}
    keys, sks, jsk = keyring(pp, groups)
    ct = _fresh(pp, keys, "G", [3, 1, 4], 1)
    share = _all_shares(pp, ct, sks, groups, 2)[0]
    assert share.mu == ct.components[1] * sks["a"].s
    assert mghe.combine_shares(pp, ct, [share], groups) == mghe.ideal_decrypt(pp, ct, jsk)


def test_distributed_matches_ideal(keyring):
    pp = mghe.setup("TEST-M", seed=9)
    groups = {"A": ["a1", "a2", "a3"], "B": ["b1", "b2", "b3"]}
    keys, sks, jsk = keyring(pp, groups)
    rng = np.random.default_rng(12)
    for t in range(20):
        ct = mghe.eval_add(_fresh(pp, keys, "A", random_plain(pp, rng), t),
                           _fresh(pp, keys, "B", random_plain(pp, rng), 100 + t))
        shares = _all_shares(pp, ct, sks, groups, t)
        for s in shares:
            err = s.mu - ct.component(s.group) * sks[s.party].s
            assert infinity_norm(err) <= pp.sampler_params.error_bound(smudge=True)
        assert mghe.combine_shares(pp, ct, shares, groups) == mghe.ideal_decrypt(pp, ct, jsk)


def test_combine_rejects_incomplete_or_duplicate(keyring):
    pp = mghe.setup("TEST-S")
    groups = {"A": ["a1", "a2"], "B": ["b1"]}
    keys, sks, _ = keyring(pp, groups)
    ct = mghe.eval_add(_fresh(pp, keys, "A", [1], 1), _fresh(pp, keys, "B", [2], 2))
    shares = _all_shares(pp, ct, sks, groups, 3)
    with pytest.raises(mghe.ShareError):
        mghe.combine_shares(pp, ct, shares[1:], groups)
    with pytest.raises(mghe.ShareError):
        mghe.combine_shares(pp, ct, shares + shares[:1], groups)
    other = mghe.eval_add(ct, ct)
    with pytest.raises(mghe.ShareError):
        mghe.combine_shares(pp, other, shares, groups)


def test_partial_decrypt_outside_roster(keyring):
    pp = mghe.setup("TEST-S")
    keys, sks, _ = keyring(pp, {"A": ["a"], "B": ["b"]})
    ct = _fresh(pp, keys, "A", [1], 1)
    with pytest.raises(mghe.RosterError):
        mghe.partial_decrypt(pp, ct, sks["b"], Sampler(pp.sampler_params, 1))


# -- serialization -----------------------------------------------------------

def test_serialization_roundtrips(keyring):
    pp = mghe.setup("TEST-S", "crs_free")
    keys, sks, _ = keyring(pp, {"A": ["a"], "B": ["b"]})
    sk = sks["a"]
    back = mghe.SecretKey.from_bytes(pp, sk.to_bytes())
    assert back.s == sk.s and back.party == "a"
    assert mghe.SECRET_KEY_CANARY in sk.to_bytes()
    ct = mghe.eval_add(_fresh(pp, keys, "A", [1], 1), _fresh(pp, keys, "B", [2], 2))
    ct2 = mghe.MultigroupCiphertext.from_bytes(pp, ct.to_bytes())
    assert ct2.roster == ct.roster and ct2.components == ct.components
    gp = keys["A"].public()
    gp2 = mghe.GroupPublic.from_bytes(pp, gp.to_bytes())
    assert gp2.beta == gp.beta and gp2.alpha == gp.alpha
    share = mghe.partial_decrypt(pp, ct, sk, Sampler(pp.sampler_params, 1))
    share2 = mghe.DecryptionShare.from_bytes(pp, share.to_bytes())
    assert share2.mu == share.mu and share2.ct_digest == share.ct_digest
    with pytest.raises(ValueError):
        mghe.MultigroupCiphertext.from_bytes(pp, share.to_bytes())


def test_ciphertext_invariants():
    pp = mghe.setup("TEST-S")
    z = RingElement.zero(pp.ctx)
    with pytest.raises(mghe.RosterError):
        mghe.MultigroupCiphertext((z, z), ("A", "B"))
    with pytest.raises(mghe.RosterError):
        mghe.MultigroupCiphertext((z, z, z), ("A", "A"))
