"""LDPC codes, soft demapping and turbo-style detection."""

import math
from itertools import product

import numpy as np
import pytest

from mbotfs.coding import (
    LLR_CLAMP,
    clamp_llr,
    group_positions,
    has_four_cycle,
    iterate_detection,
    ldpc_build,
    ldpc_decode,
    ldpc_encode,
    ldpc_from_matrix,
    load_alist,
    probs_to_llr,
    save_alist,
    soft_demap_group,
    spreading_matrix,
    syndrome_ok,
)
from mbotfs.errors import ConfigurationError
from mbotfs.im import IMConfig, interleave_vec, map_frames, qam_constellation, split_bits
from mbotfs.otfs import PathSet, build_dd_channel

CODE96 = ldpc_build(96, 1 / 3, seed=1)


class TestConstruction:
    def test_valid_code_every_generator_row(self):
        # H G^T = 0: every basis info vector must encode to a codeword.
        for i in range(CODE96.k):
            u = np.zeros(CODE96.k, dtype=np.uint8)
            u[i] = 1
            assert syndrome_ok(ldpc_encode(u, CODE96), CODE96)[0]

    def test_regular_column_weight_and_girth(self):
        assert np.all(CODE96.h.sum(axis=0) == 3)
        assert not has_four_cycle(CODE96.h)

    def test_same_seed_reproduces(self):
        a = ldpc_build(96, 1 / 3, seed=7)
        b = ldpc_build(96, 1 / 3, seed=7)
        np.testing.assert_array_equal(a.h, b.h)

    def test_different_seed_differs(self):
        a = ldpc_build(96, 1 / 3, seed=7)
        b = ldpc_build(96, 1 / 3, seed=8)
        assert not np.array_equal(a.h, b.h)

    def test_rate_must_divide(self):
        with pytest.raises(ConfigurationError):
            ldpc_build(100, 1 / 3, seed=0)

    def test_alist_round_trip(self, tmp_path):
        path = tmp_path / "code.alist"
        save_alist(path, CODE96.h)
        loaded = load_alist(path)
        np.testing.assert_array_equal(loaded.h, CODE96.h)
        u = np.random.default_rng(0).integers(0, 2, CODE96.k).astype(np.uint8)
        np.testing.assert_array_equal(ldpc_encode(u, loaded), ldpc_encode(u, CODE96))


class TestEncode:
    def test_all_zero_maps_to_all_zero(self):
        assert np.all(ldpc_encode(np.zeros(CODE96.k, dtype=np.uint8), CODE96) == 0)

    def test_random_codewords_satisfy_checks(self):
        rng = np.random.default_rng(1)
        u = rng.integers(0, 2, (20, CODE96.k)).astype(np.uint8)
        assert np.all(syndrome_ok(ldpc_encode(u, CODE96), CODE96))

    def test_linearity_exhaustive_toy_code(self):
        # Handcrafted rate-1/3 toy: [I_8 | A] is full rank and 4-cycle free
        # (a regular weight-3 profile cannot be at this size).
        h = np.hstack([np.eye(8, dtype=np.uint8), np.zeros((8, 4), dtype=np.uint8)])
        for j, rows in enumerate([(0, 1, 2), (3, 4, 5), (6, 7, 0), (1, 3, 6)]):
            h[list(rows), 8 + j] = 1
        assert not has_four_cycle(h)
        code = ldpc_from_matrix(h)
        assert code.k == 4
        words = [np.array(b, dtype=np.uint8) for b in product((0, 1), repeat=4)]
        for a in words:
            for b in words:
                lhs = ldpc_encode((a ^ b) % 2, code)
                rhs = (ldpc_encode(a, code) ^ ldpc_encode(b, code)) % 2
                np.testing.assert_array_equal(lhs, rhs)

    def test_wrong_length_rejected(self):
        with pytest.raises(ConfigurationError):
            ldpc_encode(np.zeros(5, dtype=np.uint8), CODE96)


class TestDecode:
    def test_noiseless_converges_immediately(self):
        rng = np.random.default_rng(2)
        u = rng.integers(0, 2, CODE96.k).astype(np.uint8)
        cw = ldpc_encode(u, CODE96)
        llr = (2.0 * cw - 1.0) * LLR_CLAMP
        bits, ok, iters, _ = ldpc_decode(llr, CODE96, max_iters=10)
        assert ok and iters <= 1
        np.testing.assert_array_equal(bits, cw)

    def test_single_flip_corrected(self):
        rng = np.random.default_rng(3)
        u = rng.integers(0, 2, CODE96.k).astype(np.uint8)
        cw = ldpc_encode(u, CODE96)
        llr = (2.0 * cw - 1.0) * 8.0
        llr[37] = -llr[37]  # one confidently wrong bit
        bits, ok, _, _ = ldpc_decode(llr, CODE96, max_iters=50)
        assert ok
        np.testing.assert_array_equal(bits, cw)

    def test_batch_decode_matches_single(self):
        rng = np.random.default_rng(4)
        u = rng.integers(0, 2, (6, CODE96.k)).astype(np.uint8)
        cw = ldpc_encode(u, CODE96)
        llr = (2.0 * cw - 1.0) * 4.0 + rng.normal(0, 2.0, cw.shape)
        batch_bits, batch_ok, _, _ = ldpc_decode(llr, CODE96, max_iters=30)
        for i in range(6):
            single_bits, single_ok, _, _ = ldpc_decode(llr[i], CODE96, max_iters=30)
            np.testing.assert_array_equal(batch_bits[i], single_bits)
            assert batch_ok[i] == single_ok

    def test_coding_gain_quick(self):
        # At the channel quality where uncoded Gray 4-QAM runs near 2e-2
        # BER (Es/N0 ~ 6.25 dB), the rate-1/3 code must clean almost
        # everything up. Statistical smoke check; the acceptance suite runs
        # the full-size version.
        rng = np.random.default_rng(5)
        es_n0 = 10 ** (6.25 / 10)
        n0 = 1.0 / es_n0
        n_words = 150
        u = rng.integers(0, 2, (n_words, CODE96.k)).astype(np.uint8)
        cw = ldpc_encode(u, CODE96)
        # Map pairs of coded bits onto 4-QAM, AWGN, exact bit LLRs.
        const = qam_constellation(4)
        idx = (cw[:, 0::2] << 1) | cw[:, 1::2]
        tx = const[idx]
        noise = np.sqrt(n0 / 2) * (
            rng.standard_normal(tx.shape) + 1j * rng.standard_normal(tx.shape)
        )
        rx = tx + noise
        scale = 2.0 * np.sqrt(2.0) / n0
        llr = np.empty_like(cw, dtype=float)
        llr[:, 0::2] = -scale * rx.real  # bit0 = 1 maps to negative I
        llr[:, 1::2] = -scale * rx.imag
        bits, ok, _, _ = ldpc_decode(llr, CODE96, max_iters=50)
        raw_ber = np.mean((llr > 0).astype(np.uint8) != cw)
        info_ber = np.mean(bits[:, CODE96.info_positions] != u)
        assert 5e-3 < raw_ber < 5e-2
        assert info_ber < raw_ber / 3


CFG_D4 = IMConfig(groups=4, group_size=4, null_count=1, constellation_order=4, scheme="gfim")


def _brute_force_demap(y_g, h_g, n0, cfg, priors):
    """Literal double loop over (pattern, symbol combination) hypotheses."""
    const = qam_constellation(cfg.constellation_order)
    k = int(math.log2(cfg.constellation_order))
    b = cfg.bits_per_group
    num = np.zeros(b)
    den = np.zeros(b)
    metrics = []
    bit_rows = []
    for rank, pat in enumerate(cfg.addressed_patterns()):
        active = [i for i in range(cfg.group_size) if i not in pat]
        for combo in product(range(cfg.constellation_order), repeat=len(active)):
            x = np.zeros(cfg.group_size, dtype=complex)
            x[active] = const[list(combo)]
            bits = []
            for j in range(cfg.index_bits):
                bits.append((rank >> (cfg.index_bits - 1 - j)) & 1)
            for s in combo:
                for j in range(k):
                    bits.append((s >> (k - 1 - j)) & 1)
            bits = np.array(bits)
            metric = -np.sum(np.abs(y_g - h_g @ x) ** 2) / n0 + float(bits @ priors)
            metrics.append(metric)
            bit_rows.append(bits)
    metrics = np.array(metrics)
    bit_rows = np.array(bit_rows)
    out = np.empty(b)
    for l in range(b):
        one = metrics[bit_rows[:, l] == 1]
        zero = metrics[bit_rows[:, l] == 0]
        lse = lambda v: np.max(v) + np.log(np.sum(np.exp(v - np.max(v))))
        out[l] = (lse(one) - lse(zero)) - priors[l]
    return np.clip(out, -LLR_CLAMP, LLR_CLAMP)


class TestSoftDemap:
    def test_symmetric_observation_gives_zero_llrs(self):
        y = np.zeros(4, dtype=complex)
        out = soft_demap_group(y, np.eye(4), 0.5, CFG_D4)
        np.testing.assert_allclose(out, np.zeros(CFG_D4.bits_per_group), atol=1e-10)

    def test_noiseless_limit_saturates_to_true_bits(self):
        rng = np.random.default_rng(6)
        bits = rng.integers(0, 2, CFG_D4.bits_per_group).astype(np.int8)
        sub = map_frames(bits[None, :], _single(CFG_D4))[0, 0]
        out = soft_demap_group(sub, np.eye(4), 1e-4, CFG_D4)
        np.testing.assert_array_equal(out > 0, bits.astype(bool))
        assert np.all(np.abs(out) == LLR_CLAMP)

    def test_matches_brute_force_oracle_with_priors(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            y = rng.standard_normal(4) + 1j * rng.standard_normal(4)
            h = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
            n0 = float(rng.uniform(0.2, 2.0))
            priors = rng.normal(0, 2.0, CFG_D4.bits_per_group)
            fast = soft_demap_group(y, h, n0, CFG_D4, priors)
            slow = _brute_force_demap(y, h, n0, CFG_D4, priors)
            assert np.max(np.abs(fast - slow)) < 1e-9

    def test_extrinsic_excludes_own_prior(self):
        rng = np.random.default_rng(8)
        y = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        priors = rng.normal(0, 1.0, CFG_D4.bits_per_group)
        base = soft_demap_group(y, np.eye(4), 0.7, CFG_D4, priors)
        for l in range(CFG_D4.bits_per_group):
            bumped = priors.copy()
            bumped[l] += 3.7
            out = soft_demap_group(y, np.eye(4), 0.7, CFG_D4, bumped)
            assert out[l] == pytest.approx(base[l], abs=1e-10)

    def test_sign_flip_on_negated_observation(self):
        rng = np.random.default_rng(9)
        y = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        pos = soft_demap_group(y, np.eye(4), 0.5, CFG_D4)
        neg = soft_demap_group(-y, np.eye(4), 0.5, CFG_D4)
        b1 = CFG_D4.index_bits
        np.testing.assert_allclose(neg[b1:], -pos[b1:], atol=1e-9)
        np.testing.assert_allclose(neg[:b1], pos[:b1], atol=1e-9)

    def test_max_log_tracks_exact_at_high_snr(self):
        rng = np.random.default_rng(10)
        bits = rng.integers(0, 2, CFG_D4.bits_per_group).astype(np.int8)
        sub = map_frames(bits[None, :], _single(CFG_D4))[0, 0]
        y = sub + 0.01 * (rng.standard_normal(4) + 1j * rng.standard_normal(4))
        exact = soft_demap_group(y, np.eye(4), 0.01, CFG_D4)
        approx = soft_demap_group(y, np.eye(4), 0.01, CFG_D4, max_log=True)
        np.testing.assert_array_equal(np.sign(exact), np.sign(approx))

    def test_clamp_preserves_sign(self):
        vals = np.array([-1e6, -3.0, 0.0, 7.0, 1e9])
        out = clamp_llr(vals)
        np.testing.assert_array_equal(np.sign(out), np.sign(vals))
        assert np.max(np.abs(out)) <= LLR_CLAMP


def _single(cfg):
    return IMConfig(
        groups=1, group_size=cfg.group_size, null_count=cfg.null_count,
        constellation_order=cfg.constellation_order, scheme=cfg.scheme,
    )


class TestProbsToLlr:
    def test_uniform_gives_zero(self):
        probs = np.full((3, 4), 0.25)
        np.testing.assert_allclose(probs_to_llr(probs, 4), 0.0, atol=1e-12)

    def test_one_hot_symbol_01(self):
        probs = np.zeros((1, 4))
        probs[0, 0b01] = 1.0
        out = probs_to_llr(probs, 4)
        np.testing.assert_array_equal(out[0], [-LLR_CLAMP, LLR_CLAMP])

    def test_matches_direct_marginalization(self):
        rng = np.random.default_rng(11)
        probs = rng.dirichlet(np.ones(16), size=8)
        out = probs_to_llr(probs, 16)
        from mbotfs.im import symbol_bit_table

        table = symbol_bit_table(16)
        for j in range(4):
            manual = np.log(probs[:, table[:, j] == 1].sum(axis=1)) - np.log(
                probs[:, table[:, j] == 0].sum(axis=1)
            )
            np.testing.assert_allclose(out[:, j], manual, atol=1e-12)


def _transmit_codeword(info, code, cfg, h_dd, n0, rng, perm, m, n):
    """Map one codeword onto ceil(n/bits_per_frame) frames; returns (y, h)."""
    coded = ldpc_encode(info, code)
    tx_bits = coded[perm]
    frames = code.n // cfg.bits_per_frame
    bits = tx_bits.reshape(frames, cfg.bits_per_frame)
    sub = map_frames(bits, cfg)
    if cfg.dft_spread:
        sub = np.einsum("de,fge->fgd", spreading_matrix(cfg.group_size), sub)
    s_grid = interleave_vec(sub.reshape(frames, -1), cfg.groups, cfg.group_size)
    noise = np.sqrt(n0 / 2) * (
        rng.standard_normal(s_grid.shape) + 1j * rng.standard_normal(s_grid.shape)
    )
    y = s_grid @ h_dd.T + noise
    h = np.broadcast_to(h_dd, (frames,) + h_dd.shape)
    return y, h


class TestIterateDetection:
    M = N = 4  # 16 slots, 4 groups of D=4 -> 32 bits/frame

    def _setup(self, seed, n0, h_dd=None):
        rng = np.random.default_rng(seed)
        cfg = IMConfig(groups=4, group_size=4, null_count=1,
                       constellation_order=4, scheme="gfim")
        code = ldpc_build(96, 1 / 3, seed=2)  # 3 frames of 32 bits
        perm = rng.permutation(code.n)
        info = rng.integers(0, 2, code.k).astype(np.uint8)
        if h_dd is None:
            h_dd = np.eye(self.M * self.N, dtype=complex)
        y, h = _transmit_codeword(info, code, cfg, h_dd, n0, rng, perm, self.M, self.N)
        return rng, cfg, code, perm, info, y, h

    def test_noiseless_exact_for_any_rounds(self):
        for i0 in (1, 2, 3):
            _, cfg, code, perm, info, y, h = self._setup(20 + i0, 1e-8)
            bits, ok = iterate_detection(y, h, 1e-8, cfg, code, i0, interleaver=perm)
            assert ok
            np.testing.assert_array_equal(bits, info)

    def test_single_round_is_one_shot(self):
        _, cfg, code, perm, info, y, h = self._setup(30, 0.15)
        bits_a, _ = iterate_detection(y, h, 0.15, cfg, code, 1, interleaver=perm)
        # Manual one-shot: demap every group once with zero priors, decode.
        ext = np.empty(code.n)
        bpg = cfg.bits_per_group
        idx = 0
        for f in range(y.shape[0]):
            for g in range(cfg.groups):
                pos = group_positions(cfg, g)
                h_g = h[f][np.ix_(pos, pos)]
                ext[idx * bpg:(idx + 1) * bpg] = soft_demap_group(
                    y[f, pos], h_g, 0.15, cfg, None
                )
                idx += 1
        dec_in = np.empty(code.n)
        dec_in[perm] = ext
        bits_b, _, _, _ = ldpc_decode(dec_in, code, 10)
        np.testing.assert_array_equal(bits_a, bits_b[code.info_positions])

    def test_spreading_round_trip(self):
        rng = np.random.default_rng(40)
        cfg = IMConfig(groups=4, group_size=4, null_count=1,
                       constellation_order=4, scheme="gfim", dft_spread=True)
        code = ldpc_build(96, 1 / 3, seed=2)
        perm = rng.permutation(code.n)
        info = rng.integers(0, 2, code.k).astype(np.uint8)
        y, h = _transmit_codeword(
            info, code, cfg, np.eye(16, dtype=complex), 1e-8, rng, perm, 4, 4
        )
        bits, ok = iterate_detection(y, h, 1e-8, cfg, code, 2, interleaver=perm)
        assert ok
        np.testing.assert_array_equal(bits, info)

    def test_length_mismatch_rejected(self):
        _, cfg, code, perm, info, y, h = self._setup(50, 0.1)
        with pytest.raises(ConfigurationError):
            iterate_detection(y[:2], h[:2], 0.1, cfg, code, 1, interleaver=None)
