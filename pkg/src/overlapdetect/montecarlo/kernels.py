"""Compiled trial loops: sample a read pair with a known overlap, detect, count errors.

Two families share the decision rule of :mod:`overlapdetect.detectors`:

* packed kernels for binary memoryless sources and binary outputs, where each
  read is a bit array and every shift costs a few word operations;
* generic kernels over symbol arrays for any alphabet, Markov sources and
  arbitrary channels.

Shifts whose best attainable score cannot beat the threshold are skipped
(``t_min`` is one more than the minimal detectable overlap), and a noisy
shift is abandoned once its running score plus the best possible remainder
falls to the threshold.  Both shortcuts leave the decision unchanged.
"""

from __future__ import annotations

import numpy as np
from numba import njit, types
from numba.extending import intrinsic

from .rng import bernoulli_word, next_below, next_u64, next_unit

# Allocation-free kernels skip reference counting: with it, every array argument
# costs an atomic incref/decref pair per call on paths with early exits.
hot = njit(cache=True, nogil=True, _nrt=False)

ALL_ONES = np.uint64(0xFFFFFFFFFFFFFFFF)
ONE = np.uint64(1)
NEG_INF = -np.inf


@intrinsic
def popcount(typingctx, x):
    """Number of set bits, typed ``int64`` so counts never mix signedness."""
    sig = types.int64(types.uint64)

    def codegen(context, builder, signature, args):
        return builder.ctpop(args[0])

    return sig, codegen


# -- shared decision ------------------------------------------------------------


@njit(inline="always")
def choose(scores, shifts, count, eps, cutoff):
    """Best candidate with ties toward smaller ``|t|`` then positive; 0 if none."""
    if count == 0:
        return 0
    best = scores[0]
    for i in range(1, count):
        if scores[i] > best:
            best = scores[i]
    pick = 0
    pick_abs = 1 << 30
    for i in range(count):
        if scores[i] >= best - eps:
            t = shifts[i]
            a = abs(t)
            if a < pick_abs or (a == pick_abs and t > 0):
                pick = t
                pick_abs = a
    if pick_abs < cutoff:
        return 0
    return pick


# -- packed bit arrays -------------------------------------------------------------


@njit(inline="always")
def chunk(words, start, j):
    """Bits ``start + 64 j ..`` of a packed array as one word (array is zero padded)."""
    q = (start >> 6) + j
    r = np.uint64(start & 63)
    lo = words[q] >> r
    if r != 0:
        lo |= words[q + 1] << (np.uint64(64) - r)
    return lo


@njit(inline="always")
def tail_mask(count, j):
    rem = count - 64 * j
    if rem >= 64:
        return ALL_ONES
    return (ONE << np.uint64(rem)) - ONE


@njit(inline="always")
def window_equal(a, a_start, b, b_start, count):
    nchunks = (count + 63) >> 6
    for j in range(nchunks):
        m = tail_mask(count, j)
        if (chunk(a, a_start, j) & m) != (chunk(b, b_start, j) & m):
            return False
    return True


@njit(inline="always")
def window_ones(a, a_start, count):
    total = 0
    for j in range((count + 63) >> 6):
        total += popcount(chunk(a, a_start, j) & tail_mask(count, j))
    return total


@njit(inline="always")
def cell_score(count, weight):
    if count == 0:
        return 0.0
    return count * weight


@njit(inline="always")
def pair_score(n00, n01, n10, n11, lam):
    return (cell_score(n00, lam[0, 0]) + cell_score(n01, lam[0, 1])
            + cell_score(n10, lam[1, 0]) + cell_score(n11, lam[1, 1]))


@hot
def _block_score(words, t, log_p):
    """Surprisal of the first ``t`` bits; kept out of line since matches are rare."""
    ones = window_ones(words, 0, t)
    return -(cell_score(ones, log_p[1]) + cell_score(t - ones, log_p[0]))


@hot
def _decide_one_word(w1, w2, ell, t_min, log_p, floor, eps, cutoff, one_sided, scores, shifts):
    """Reads of at most 64 bits: every shift is a single masked comparison."""
    a = w1[0]
    b = w2[0]
    count = 0
    for t in range(max(t_min, 1), ell + 1):
        m = tail_mask(t, 0)
        if ((a >> np.uint64(ell - t)) ^ b) & m == 0:
            s = _block_score(w2, t, log_p)
            if s > floor:
                scores[count] = s
                shifts[count] = t
                count += 1
    if not one_sided:
        for t in range(max(t_min, 1), ell):
            m = tail_mask(t, 0)
            if ((b >> np.uint64(ell - t)) ^ a) & m == 0:
                s = _block_score(w1, t, log_p)
                if s > floor:
                    scores[count] = s
                    shifts[count] = -t
                    count += 1
    return choose(scores, shifts, count, eps, cutoff)


@hot
def decide_packed_noiseless(w1, w2, ell, t_min, log_p, floor, eps, cutoff, one_sided, scores, shifts):
    """Noiseless decision for binary memoryless reads stored as bit arrays."""
    if ell <= 64:
        return _decide_one_word(w1, w2, ell, t_min, log_p, floor, eps, cutoff, one_sided, scores, shifts)
    count = 0
    for t in range(max(t_min, 1), ell + 1):
        if window_equal(w1, ell - t, w2, 0, t):
            s = _block_score(w2, t, log_p)
            if s > floor:
                scores[count] = s
                shifts[count] = t
                count += 1
    if not one_sided:
        for t in range(max(t_min, 1), ell):
            if window_equal(w2, ell - t, w1, 0, t):
                s = _block_score(w1, t, log_p)
                if s > floor:
                    scores[count] = s
                    shifts[count] = -t
                    count += 1
    return choose(scores, shifts, count, eps, cutoff)


@njit(inline="always")
def _packed_shift_score(a, a_start, b, t, lam, lam_max, floor):
    """Score of one shift, or ``-inf`` once the threshold is out of reach."""
    c11 = 0
    ca = 0
    cb = 0
    nchunks = (t + 63) >> 6
    for j in range(nchunks):
        m = tail_mask(t, j)
        x = chunk(a, a_start, j) & m
        y = b[j] & m
        c11 += popcount(x & y)
        ca += popcount(x)
        cb += popcount(y)
        if j + 1 < nchunks:
            seen = 64 * (j + 1)
            if _counts_score(seen - ca - cb + c11, cb - c11, ca - c11, c11, lam) + (t - seen) * lam_max <= floor:
                return NEG_INF
    return _counts_score(t - ca - cb + c11, cb - c11, ca - c11, c11, lam)


@hot
def _counts_score(n00, n01, n10, n11, lam):
    return pair_score(n00, n01, n10, n11, lam)


@hot
def decide_packed_noisy(w1, w2, ell, t_min, lam, lam_max, floor, eps, cutoff, one_sided, scores, shifts):
    """Noisy decision for binary outputs stored as bit arrays.

    ``lam[a, b]`` is the log-likelihood ratio of the earlier read's symbol
    ``a`` against the later read's symbol ``b``; ``-inf`` marks excluded pairs.
    """
    count = 0
    for t in range(max(t_min, 1), ell + 1):
        s = _packed_shift_score(w1, ell - t, w2, t, lam, lam_max, floor)
        if s > floor:
            scores[count] = s
            shifts[count] = t
            count += 1
    if not one_sided:
        for t in range(max(t_min, 1), ell):
            s = _packed_shift_score(w2, ell - t, w1, t, lam, lam_max, floor)
            if s > floor:
                scores[count] = s
                shifts[count] = -t
                count += 1
    return choose(scores, shifts, count, eps, cutoff)


FULL_LEVEL = 1 << 32


@njit(inline="always")
def bits_with_level(state, level, low):
    """Random word whose bits are set w.p. ``level / 2**32``; ``low < 0`` means fair."""
    if level <= 0:
        return np.uint64(0)
    if level >= FULL_LEVEL:
        return ALL_ONES
    if low < 0:
        return next_u64(state)
    return bernoulli_word(state, np.uint64(level), low)


@njit(inline="always")
def _fill_bits(state, words, nwords, level, low):
    for j in range(nwords):
        words[j] = bits_with_level(state, level, low)


@njit(inline="always")
def _copy_window(src, start, count, dst):
    for j in range((count + 63) >> 6):
        dst[j] = chunk(src, start, j) & tail_mask(count, j)
    dst[(count + 63) >> 6] = np.uint64(0)


@njit(inline="always")
def _apply_flips(state, words, ell, flip_level, flip_low, same_flip):
    """Binary channel: flip a 0 with level ``flip_level[0]`` and a 1 with ``flip_level[1]``."""
    for j in range((ell + 63) >> 6):
        x = words[j]
        if same_flip:
            f = bits_with_level(state, flip_level[0], flip_low[0])
        else:
            f0 = bits_with_level(state, flip_level[0], flip_low[0])
            f1 = bits_with_level(state, flip_level[1], flip_low[1])
            f = (~x & f0) | (x & f1)
        words[j] = (x ^ f) & tail_mask(ell, j)


@njit(inline="always")
def sample_packed(state, t, ell, one_level, one_low, noisy, flip_level, flip_low, same_flip, z, w1, w2):
    """Draw a binary read pair with overlap ``t`` into ``w1``/``w2``.

    ``one_level`` is the quantized probability of a 1 (``one_low < 0`` marks
    an exactly fair source drawn from raw words).
    """
    if t == 0:
        nw = (ell + 63) >> 6
        _fill_bits(state, w1, nw, one_level, one_low)
        _fill_bits(state, w2, nw, one_level, one_low)
        w1[nw - 1] &= tail_mask(ell, nw - 1)
        w2[nw - 1] &= tail_mask(ell, nw - 1)
        w1[nw] = np.uint64(0)
        w2[nw] = np.uint64(0)
    else:
        a = abs(t)
        total = 2 * ell - a
        nz = (total + 63) >> 6
        _fill_bits(state, z, nz, one_level, one_low)
        z[nz - 1] &= tail_mask(total, nz - 1)
        z[nz] = np.uint64(0)
        if t > 0:
            _copy_window(z, 0, ell, w1)
            _copy_window(z, ell - a, ell, w2)
        else:
            _copy_window(z, 0, ell, w2)
            _copy_window(z, ell - a, ell, w1)
    if noisy:
        _apply_flips(state, w1, ell, flip_level, flip_low, same_flip)
        _apply_flips(state, w2, ell, flip_level, flip_low, same_flip)


@hot
def _packed_trials(state, count, t, ell, t_min, one_level, one_low, noisy, flip_level, flip_low, same_flip,
                   noisy_detector, log_p, lam, lam_max, floor, eps, cutoff, one_sided, z, w1, w2, scores,
                   shifts, out_hats):
    errors = 0
    for i in range(count):
        sample_packed(state, t, ell, one_level, one_low, noisy, flip_level, flip_low, same_flip, z, w1, w2)
        if noisy_detector:
            hat = decide_packed_noisy(w1, w2, ell, t_min, lam, lam_max, floor, eps, cutoff, one_sided,
                                      scores, shifts)
        else:
            hat = decide_packed_noiseless(w1, w2, ell, t_min, log_p, floor, eps, cutoff, one_sided,
                                          scores, shifts)
        if hat != t:
            errors += 1
        if out_hats.size:
            out_hats[i] = hat
    return errors


@njit(cache=True, nogil=True)
def packed_block(key, first, count, t, ell, t_min, one_level, one_low, noisy, flip_level, flip_low,
                 same_flip, noisy_detector, log_p, lam, lam_max, floor, eps, cutoff, one_sided, out_hats):
    """Run ``count`` trials; returns the number of wrong decisions.

    ``out_hats`` (length ``count`` or 0) optionally records every decision.
    """
    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(key) + np.uint64(first) * np.uint64(0xD1B54A32D192ED03)
    nz = (2 * ell + 63) // 64 + 2
    z = np.zeros(nz, dtype=np.uint64)
    w1 = np.zeros(nz, dtype=np.uint64)
    w2 = np.zeros(nz, dtype=np.uint64)
    scores = np.empty(2 * ell, dtype=np.float64)
    shifts = np.empty(2 * ell, dtype=np.int64)
    return _packed_trials(state, count, t, ell, t_min, one_level, one_low, noisy, flip_level, flip_low,
                          same_flip, noisy_detector, log_p, lam, lam_max, floor, eps, cutoff, one_sided,
                          z, w1, w2, scores, shifts, out_hats)


@njit(cache=True)
def packed_sample_reads(key, first, count, t, ell, one_level, one_low, noisy, flip_level, flip_low,
                        same_flip):
    """The read pairs drawn by :func:`packed_block`, unpacked to symbols."""
    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(key) + np.uint64(first) * np.uint64(0xD1B54A32D192ED03)
    nz = (2 * ell + 63) // 64 + 2
    z = np.zeros(nz, dtype=np.uint64)
    w1 = np.zeros(nz, dtype=np.uint64)
    w2 = np.zeros(nz, dtype=np.uint64)
    out = np.empty((count, 2, ell), dtype=np.int64)
    for i in range(count):
        sample_packed(state, t, ell, one_level, one_low, noisy, flip_level, flip_low, same_flip, z, w1, w2)
        for p in range(ell):
            out[i, 0, p] = np.int64((w1[p >> 6] >> np.uint64(p & 63)) & ONE)
            out[i, 1, p] = np.int64((w2[p >> 6] >> np.uint64(p & 63)) & ONE)
    return out


# -- generic symbol arrays ---------------------------------------------------------


@njit(inline="always")
def draw(state, cdf_row, k):
    u = next_unit(state)
    j = 0
    while j < k - 1 and u >= cdf_row[j]:
        j += 1
    return j


@njit(inline="always")
def draw_symbol(state, cdf_row, k, uniform_bits):
    if uniform_bits > 0:
        return np.int64(next_u64(state) >> np.uint64(64 - uniform_bits))
    return draw(state, cdf_row, k)


@njit(inline="always")
def _chain(state, buf, start, length, prev, init_cdf, trans_cdf, k, markov, uniform_bits):
    for i in range(start, start + length):
        if markov and i > 0 and prev >= 0:
            x = draw(state, trans_cdf[prev], k)
        elif markov:
            x = draw(state, init_cdf, k)
        else:
            x = draw_symbol(state, init_cdf, k, uniform_bits)
        buf[i] = x
        prev = x
    return prev


@njit(inline="always")
def disjoint_gap(i1, k, n, ell):
    """Offset ``i2 - i1`` of the ``k``-th disjoint placement for start ``i1``."""
    if i1 <= ell - 1:
        lo = -ell + 1
    elif i1 <= n - ell + 1:
        lo = 1 - i1
    else:
        lo = ell - n
    below = max(0, -ell - lo + 1)
    if k < below:
        return lo + k
    return ell + (k - below)


@njit(inline="always")
def sample_generic(state, t, n, ell, init_cdf, trans_cdf, power_cdf, k, markov, uniform_bits,
                   chan_cdf, ky, noisy, z, x1, x2, r1, r2):
    """Draw symbol reads with overlap ``t`` into ``r1``/``r2``."""
    if t == 0:
        if markov:
            n_ell = n - (2 * ell - 1)
            i1 = next_below(state, n) + 1
            d = disjoint_gap(i1, next_below(state, n_ell), n, ell)
            first, second = (x1, x2) if d > 0 else (x2, x1)
            last = _chain(state, first, 0, ell, -1, init_cdf, trans_cdf, k, True, 0)
            steps = abs(d) - ell + 1
            row = init_cdf if steps >= power_cdf.shape[0] else power_cdf[steps, last]
            second[0] = draw(state, row, k)
            _chain(state, second, 1, ell - 1, second[0], init_cdf, trans_cdf, k, True, 0)
        else:
            _chain(state, x1, 0, ell, -1, init_cdf, trans_cdf, k, False, uniform_bits)
            _chain(state, x2, 0, ell, -1, init_cdf, trans_cdf, k, False, uniform_bits)
    else:
        a = abs(t)
        _chain(state, z, 0, 2 * ell - a, -1, init_cdf, trans_cdf, k, markov, uniform_bits)
        early, late = (x1, x2) if t > 0 else (x2, x1)
        for i in range(ell):
            early[i] = z[i]
            late[i] = z[ell - a + i]
    for i in range(ell):
        if noisy:
            r1[i] = draw(state, chan_cdf[x1[i]], ky)
            r2[i] = draw(state, chan_cdf[x2[i]], ky)
        else:
            r1[i] = x1[i]
            r2[i] = x2[i]


@njit(inline="always")
def _block_surprisal(seq, t, log_init, log_trans):
    s = -log_init[seq[0]]
    for i in range(1, t):
        s -= log_trans[seq[i - 1], seq[i]]
    return s


@hot
def decide_generic_noiseless(r1, r2, ell, t_min, log_init, log_trans, floor, eps, cutoff, one_sided,
                             scores, shifts):
    count = 0
    for sign in (1, -1):
        if sign < 0 and one_sided:
            break
        a, b = (r1, r2) if sign > 0 else (r2, r1)
        top = ell if sign > 0 else ell - 1
        for t in range(max(t_min, 1), top + 1):
            ok = True
            for i in range(t):
                if a[ell - t + i] != b[i]:
                    ok = False
                    break
            if ok:
                s = _block_surprisal(b, t, log_init, log_trans)
                if s > floor:
                    scores[count] = s
                    shifts[count] = sign * t
                    count += 1
    return choose(scores, shifts, count, eps, cutoff)


@hot
def decide_generic_noisy(r1, r2, ell, t_min, lam, lam_max, floor, eps, cutoff, one_sided, scores, shifts):
    count = 0
    for sign in (1, -1):
        if sign < 0 and one_sided:
            break
        a, b = (r1, r2) if sign > 0 else (r2, r1)
        top = ell if sign > 0 else ell - 1
        for t in range(max(t_min, 1), top + 1):
            s = 0.0
            alive = True
            for i in range(t):
                s += lam[a[ell - t + i], b[i]]
                if (i & 7) == 7 and s + (t - i - 1) * lam_max <= floor:
                    alive = False
                    break
            if alive and s > floor:
                scores[count] = s
                shifts[count] = sign * t
                count += 1
    return choose(scores, shifts, count, eps, cutoff)


@hot
def _generic_trials(state, count, t, n, ell, t_min, init_cdf, trans_cdf, power_cdf, markov, uniform_bits,
                    chan_cdf, noisy, noisy_detector, log_init, log_trans, lam, lam_max, floor, eps, cutoff,
                    one_sided, z, x1, x2, r1, r2, scores, shifts, out_hats):
    k = init_cdf.size
    ky = chan_cdf.shape[1]
    errors = 0
    for i in range(count):
        sample_generic(state, t, n, ell, init_cdf, trans_cdf, power_cdf, k, markov, uniform_bits,
                       chan_cdf, ky, noisy, z, x1, x2, r1, r2)
        if noisy_detector:
            hat = decide_generic_noisy(r1, r2, ell, t_min, lam, lam_max, floor, eps, cutoff, one_sided,
                                       scores, shifts)
        else:
            hat = decide_generic_noiseless(r1, r2, ell, t_min, log_init, log_trans, floor, eps, cutoff,
                                           one_sided, scores, shifts)
        if hat != t:
            errors += 1
        if out_hats.size:
            out_hats[i] = hat
    return errors


@njit(cache=True, nogil=True)
def generic_block(key, first, count, t, n, ell, t_min, init_cdf, trans_cdf, power_cdf, markov,
                  uniform_bits, chan_cdf, noisy, noisy_detector, log_init, log_trans, lam, lam_max, floor,
                  eps, cutoff, one_sided, out_hats):
    """Symbol-array counterpart of :func:`packed_block`."""
    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(key) + np.uint64(first) * np.uint64(0xD1B54A32D192ED03)
    z = np.empty(2 * ell, dtype=np.int64)
    x1 = np.empty(ell, dtype=np.int64)
    x2 = np.empty(ell, dtype=np.int64)
    r1 = np.empty(ell, dtype=np.int64)
    r2 = np.empty(ell, dtype=np.int64)
    scores = np.empty(2 * ell, dtype=np.float64)
    shifts = np.empty(2 * ell, dtype=np.int64)
    return _generic_trials(state, count, t, n, ell, t_min, init_cdf, trans_cdf, power_cdf, markov,
                           uniform_bits, chan_cdf, noisy, noisy_detector, log_init, log_trans, lam, lam_max,
                           floor, eps, cutoff, one_sided, z, x1, x2, r1, r2, scores, shifts, out_hats)


@njit(cache=True)
def generic_sample_reads(key, first, count, t, n, ell, init_cdf, trans_cdf, power_cdf, markov,
                         uniform_bits, chan_cdf, noisy):
    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(key) + np.uint64(first) * np.uint64(0xD1B54A32D192ED03)
    k = init_cdf.size
    ky = chan_cdf.shape[1]
    z = np.empty(2 * ell, dtype=np.int64)
    x1 = np.empty(ell, dtype=np.int64)
    x2 = np.empty(ell, dtype=np.int64)
    r1 = np.empty(ell, dtype=np.int64)
    r2 = np.empty(ell, dtype=np.int64)
    out = np.empty((count, 2, ell), dtype=np.int64)
    for i in range(count):
        sample_generic(state, t, n, ell, init_cdf, trans_cdf, power_cdf, k, markov, uniform_bits,
                       chan_cdf, ky, noisy, z, x1, x2, r1, r2)
        out[i, 0] = r1
        out[i, 1] = r2
    return out
