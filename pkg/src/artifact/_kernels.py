"""Compiled inner loops.

Letters are coded a=0, A=1, b=2, B=3 (inverse of c is c ^ 1).  A base step
takes the top three bits of a xoshiro output and maps them through an
8-entry table to a letter code, -1 meaning "stay put".  The lazy simple walk
on F2 is [-1, -1, -1, -1, 0, 1, 2, 3]; the lazy semigroup walk is
[-1, -1, -1, -1, 0, 0, 2, 2] with the semigroup flag set.

Component kinds for the mixture kernels: 0 = one plain step, 1 = lamps clear
on [-s, s] with |displacement| >= r.
"""

from __future__ import annotations

import numba as nb
import numpy as np

from .rng import draw_index, mix64, next_u64, seed_state

P1 = 1_000_000_007
P2 = 998_244_353
HB = 911_382_323


@nb.njit(cache=True)
def _grow_lamps(lamps, off):
    n = lamps.shape[0]
    shift = (n + 1) // 2
    new = np.zeros(2 * n + 1, dtype=np.uint8)
    new[shift: shift + n] = lamps
    return new, off + shift


@nb.njit(cache=True)
def _grow_word(word):
    new = np.empty(2 * word.shape[0] + 16, dtype=np.int8)
    new[: word.shape[0]] = word
    return new


@nb.njit(cache=True)
def _apply_fg(word, wl, c):
    if wl > 0 and word[wl - 1] == (c ^ 1):
        return word, wl - 1
    if wl >= word.shape[0]:
        word = _grow_word(word)
    word[wl] = c
    return word, wl + 1


@nb.njit(cache=True)
def _push(word, wl, c):
    if wl >= word.shape[0]:
        word = _grow_word(word)
    word[wl] = c
    return word, wl + 1


@nb.njit(cache=True)
def _increment(st, table, lamps, off, pos, word, wl, win0, log, kind, s, r, cap, semigroup, track_word):
    """Run one stopped excursion in place.  The caller guarantees that the
    lamp buffer covers pos +- cap and the word buffer has cap free slots."""
    p0 = pos
    for k in range(2 * s + 1):
        win0[k] = lamps[off + p0 - s + k]
    cnt = 0
    t = 0
    while t < cap:
        t += 1
        c = np.int64(table[next_u64(st) >> np.uint64(61)])
        if c < 0:
            log[t - 1] = -1
        else:
            toggle = c == 2 if semigroup else c <= 1
            if toggle:
                lamps[off + pos] ^= 1
                d = pos - p0
                if -s <= d <= s:
                    if lamps[off + pos] != win0[d + s]:
                        cnt += 1
                    else:
                        cnt -= 1
            if semigroup:
                pos += 1 if c == 0 else -1
                if track_word:
                    word[wl] = c
                    wl += 1
            else:
                if c == 2:
                    pos += 1
                elif c == 3:
                    pos -= 1
                if track_word:
                    if wl > 0 and word[wl - 1] == (c ^ 1):
                        wl -= 1
                    else:
                        word[wl] = c
                        wl += 1
            log[t - 1] = c
        if kind == 0:
            return pos, wl, t, True
        dp = pos - p0
        if cnt == 0 and (dp >= r or -dp >= r):
            return pos, wl, t, True
    return pos, wl, t, False


@nb.njit(cache=True)
def _undo(lamps, off, pos, word, wl, log, t, semigroup, track_word):
    for q in range(t - 1, -1, -1):
        c = log[q]
        if c < 0:
            continue
        if semigroup:
            if track_word:
                wl -= 1
            if c == 0:
                pos -= 1
            else:
                pos += 1
                lamps[off + pos] ^= 1
        else:
            if c == 2:
                pos -= 1
            elif c == 3:
                pos += 1
            else:
                lamps[off + pos] ^= 1
            if track_word:
                c = c ^ 1
                if wl > 0 and word[wl - 1] == (c ^ 1):
                    wl -= 1
                else:
                    word[wl] = c
                    wl += 1
    return pos, wl


@nb.njit(cache=True)
def _cover(lamps, off, lo, hi):
    while off + lo < 0 or off + hi >= lamps.shape[0]:
        lamps, off = _grow_lamps(lamps, off)
    return lamps, off


@nb.njit(cache=True)
def _reserve(word, need):
    while word.shape[0] < need:
        word = _grow_word(word)
    return word


@nb.njit(cache=True)
def mutau_path(
    st, table, comp_cdf, kinds, s_arr, r_arr, cap, reject, n_steps, force_first,
    semigroup, start_lamps, start_pos, start_word, site, window, depth, track_word=True,
):
    """One trajectory of the mixture walk, tracked on both groups.

    Returns (word, lamp_at_site, last_window_change, last_prefix_change,
    base_steps, truncations, components).  Step indices are 1-based; 0 means
    "never changed".
    """
    lamps = np.zeros(129, dtype=np.uint8)
    off = 64
    pos = start_pos
    for x in start_lamps:
        lamps, off = _cover(lamps, off, x, x)
        lamps[off + x] ^= 1
    word = np.empty(64, dtype=np.int8)
    wl = 0
    for c in start_word:
        word = _reserve(word, wl + 1)
        if not semigroup and wl > 0 and word[wl - 1] == (c ^ 1):
            wl -= 1
        else:
            word[wl] = c
            wl += 1

    lamps, off = _cover(lamps, off, site - window, site + window)
    wsnap = np.empty(2 * window + 1, dtype=np.uint8)
    for k in range(2 * window + 1):
        wsnap[k] = lamps[off + site - window + k]
    psnap = np.full(depth, -1, dtype=np.int8)
    for k in range(min(depth, wl)):
        psnap[k] = word[k]

    smax = 0
    for i in range(s_arr.shape[0]):
        if s_arr[i] > smax:
            smax = s_arr[i]
    win0 = np.zeros(2 * smax + 1, dtype=np.uint8)
    log = np.empty(max(cap, 1), dtype=np.int8)
    comps = np.empty(n_steps, dtype=np.int64)

    base_steps = 0
    truncations = 0
    last_w = 0
    last_p = 0
    for j in range(n_steps):
        ci = draw_index(st, comp_cdf)
        if j == 0 and force_first >= 0:
            ci = force_first
        comps[j] = ci
        kind = kinds[ci]
        s = s_arr[ci]
        r = r_arr[ci]
        reach = 1 if kind == 0 else cap
        while True:
            if off + pos - reach - s - 1 < 0 or off + pos + reach + s + 1 >= lamps.shape[0]:
                lamps, off = _cover(lamps, off, pos - reach - s - 1, pos + reach + s + 1)
            if track_word and wl + reach + 1 > word.shape[0]:
                word = _reserve(word, wl + reach + 1)
            pos, wl, t, done = _increment(
                st, table, lamps, off, pos, word, wl, win0, log, kind, s, r, cap, semigroup, track_word
            )
            base_steps += t
            if done:
                break
            truncations += 1
            if not reject:
                break
            # undo the truncated excursion and redraw the same component
            pos, wl = _undo(lamps, off, pos, word, wl, log, t, semigroup, track_word)
        changed = False
        if off + site - window < 0 or off + site + window >= lamps.shape[0]:
            lamps, off = _cover(lamps, off, site - window, site + window)
        for k in range(2 * window + 1):
            v = lamps[off + site - window + k]
            if v != wsnap[k]:
                changed = True
                wsnap[k] = v
        if changed:
            last_w = j + 1
        changed = False
        for k in range(depth):
            v = word[k] if k < wl else np.int8(-1)
            if v != psnap[k]:
                changed = True
                psnap[k] = v
        if changed:
            last_p = j + 1
    lamps, off = _cover(lamps, off, site, site)
    return word[:wl].copy(), lamps[off + site], last_w, last_p, base_steps, truncations, comps


@nb.njit(cache=True)
def lamp_ensemble(
    key, first_index, paths, table, comp_cdf, kinds, s_arr, r_arr, cap, reject, n_steps,
    start_lamps, start_pos, site, window,
):
    """Many projected paths; per-trial streams keyed by (key, index)."""
    from_lamp = np.empty(paths, dtype=np.uint8)
    last_w = np.empty(paths, dtype=np.int64)
    steps = np.empty(paths, dtype=np.int64)
    trunc = np.empty(paths, dtype=np.int64)
    empty = np.empty(0, dtype=np.int8)
    for i in range(paths):
        st = _seed(key, first_index + i)
        _, lamp, lw, _, bs, tr, _ = mutau_path(
            st, table, comp_cdf, kinds, s_arr, r_arr, cap, reject, n_steps, -1,
            False, start_lamps, start_pos, empty, site, window, 0, False,
        )
        from_lamp[i] = lamp
        last_w[i] = lw
        steps[i] = bs
        trunc[i] = tr
    return from_lamp, last_w, steps, trunc


@nb.njit(cache=True)
def prefix_ensemble(
    key, first_index, paths, table, comp_cdf, kinds, s_arr, r_arr, cap, reject, n_steps,
    force_first, depth,
):
    """Depth-d prefixes of many free-group paths from e.

    Returns (prefix codes [paths, depth] with -1 padding, last prefix change,
    base steps, truncations).
    """
    pref = np.full((paths, depth), -1, dtype=np.int8)
    last_p = np.empty(paths, dtype=np.int64)
    steps = np.empty(paths, dtype=np.int64)
    trunc = np.empty(paths, dtype=np.int64)
    empty_l = np.empty(0, dtype=np.int64)
    empty_w = np.empty(0, dtype=np.int8)
    for i in range(paths):
        st = _seed(key, first_index + i)
        w, _, _, lp, bs, tr, _ = mutau_path(
            st, table, comp_cdf, kinds, s_arr, r_arr, cap, reject, n_steps, force_first,
            False, empty_l, 0, empty_w, 0, 0, depth,
        )
        for k in range(min(depth, w.shape[0])):
            pref[i, k] = w[k]
        last_p[i] = lp
        steps[i] = bs
        trunc[i] = tr
    return pref, last_p, steps, trunc


@nb.njit(cache=True)
def _seed(key, index):
    return seed_state(key, index)


@nb.njit(cache=True)
def lamp_clear_ensemble(key, first_index, runs, s, r, cap, semigroup):
    """Independent lamp-clear runs from the identity, no redraw on truncation.

    Returns (steps, truncated, final pos, predicate_ok) per run, where
    predicate_ok re-checks the stop condition on the final state from scratch.
    """
    steps = np.empty(runs, dtype=np.int64)
    trunc = np.empty(runs, dtype=np.bool_)
    fpos = np.empty(runs, dtype=np.int64)
    ok = np.empty(runs, dtype=np.bool_)
    lamps = np.zeros(2 * cap + 3, dtype=np.uint8)
    off = cap + 1
    for i in range(runs):
        st = _seed(key, first_index + i)
        pos = 0
        cnt = 0
        lo = 0
        hi = 0
        t = 0
        done = False
        while t < cap:
            t += 1
            u = np.int64(next_u64(st) >> np.uint64(61))
            if u < 4:
                pass
            elif semigroup:
                if u < 6:
                    pos += 1
                else:
                    lamps[off + pos] ^= 1
                    if -s <= pos <= s:
                        cnt += 1 if lamps[off + pos] else -1
                    pos -= 1
            else:
                if u < 6:
                    lamps[off + pos] ^= 1
                    if -s <= pos <= s:
                        cnt += 1 if lamps[off + pos] else -1
                elif u == 6:
                    pos += 1
                else:
                    pos -= 1
            if pos < lo:
                lo = pos
            if pos > hi:
                hi = pos
            if cnt == 0 and (pos >= r or -pos >= r):
                done = True
                break
        steps[i] = t
        trunc[i] = not done
        fpos[i] = pos
        good = pos >= r or -pos >= r
        for x in range(-s, s + 1):
            if lamps[off + x] != 0:
                good = False
        ok[i] = good
        for x in range(lo - 1, hi + 2):
            lamps[off + x] = 0
    return steps, trunc, fpos, ok


@nb.njit(cache=True)
def word_ensemble(key, first_index, paths, table, comp_cdf, kinds, s_arr, r_arr, cap, reject, n_steps):
    """Final words of many free-group paths from e, concatenated.

    Returns (codes, offsets, base steps, truncations); path i is
    codes[offsets[i]:offsets[i + 1]].
    """
    chunks = []
    offs = np.zeros(paths + 1, dtype=np.int64)
    steps = np.empty(paths, dtype=np.int64)
    trunc = np.empty(paths, dtype=np.int64)
    empty_l = np.empty(0, dtype=np.int64)
    empty_w = np.empty(0, dtype=np.int8)
    for i in range(paths):
        st = _seed(key, first_index + i)
        w, _, _, _, bs, tr, _ = mutau_path(
            st, table, comp_cdf, kinds, s_arr, r_arr, cap, reject, n_steps, -1,
            False, empty_l, 0, empty_w, 0, 0, 0,
        )
        chunks.append(w)
        offs[i + 1] = offs[i] + w.shape[0]
        steps[i] = bs
        trunc[i] = tr
    codes = np.empty(offs[paths], dtype=np.int8)
    for i in range(paths):
        codes[offs[i]: offs[i + 1]] = chunks[i]
    return codes, offs, steps, trunc


@nb.njit(cache=True)
def extent_run(st, table, seq, kinds, s_arr, r_arr, cap, reject):
    """Largest |x| over lit lamps after each increment of a forced component
    sequence; returns (extent, truncations)."""
    lamps = np.zeros(129, dtype=np.uint8)
    off = 64
    pos = 0
    lo = 0
    hi = 0
    smax = 0
    for i in range(s_arr.shape[0]):
        if s_arr[i] > smax:
            smax = s_arr[i]
    win0 = np.zeros(2 * smax + 1, dtype=np.uint8)
    log = np.empty(max(cap, 1), dtype=np.int8)
    word = np.empty(1, dtype=np.int8)
    ext = 0
    trunc = 0
    for j in range(seq.shape[0]):
        ci = seq[j]
        kind = kinds[ci]
        reach = 1 if kind == 0 else cap
        while True:
            lamps, off = _cover(lamps, off, pos - reach - smax - 1, pos + reach + smax + 1)
            start = pos
            pos, _, t, done = _increment(
                st, table, lamps, off, pos, word, 0, win0, log, kind, s_arr[ci], r_arr[ci], cap, False, False
            )
            span = 0
            p = start
            for q in range(t):
                c = log[q]
                if c == 2:
                    p += 1
                elif c == 3:
                    p -= 1
                if p - start > span:
                    span = p - start
                if start - p > span:
                    span = start - p
            if start - span < lo:
                lo = start - span
            if start + span > hi:
                hi = start + span
            if done or not reject:
                if not done:
                    trunc += 1
                break
            trunc += 1
            pos, _ = _undo(lamps, off, pos, word, 0, log, t, False, False)
        for x in range(lo, hi + 1):
            if lamps[off + x] != 0:
                if x > ext:
                    ext = x
                if -x > ext:
                    ext = -x
    return ext, trunc


# ---------------------------------------------------------------------------
# hashing of reduced words and the thinned switch-hit stopping rule


@nb.njit(cache=True)
def word_key(h1, h2, n):
    return (np.uint64(h1) << np.uint64(30)) ^ np.uint64(h2) ^ (np.uint64(n) << np.uint64(60))


@nb.njit(cache=True)
def uniform_of(seed, key):
    """64-bit uniform attached to a group element; compared as integers."""
    return mix64(mix64(seed) ^ key)


@nb.njit(cache=True)
def _hash_codes(buf, n):
    h1 = 0
    h2 = 0
    for i in range(n):
        h1 = (h1 * HB + buf[i] + 1) % P1
        h2 = (h2 * HB + buf[i] + 1) % P2
    return h1, h2


@nb.njit(cache=True)
def _prod_key(xc, xo, xl, a, la, H1, H2, pw1, pw2, yc, yo, yl, tmp):
    """Key of the reduced product x * a * y.

    x and y are slices of flattened code arrays; a is a word stack with
    prefix hashes H1/H2 (H[k] = hash of a[:k]).
    """
    if la <= xl + yl:
        n = 0
        for i in range(xl):
            tmp[n] = xc[xo + i]
            n += 1
        for i in range(la):
            c = a[i]
            if n > 0 and tmp[n - 1] == (c ^ 1):
                n -= 1
            else:
                tmp[n] = c
                n += 1
        for i in range(yl):
            c = yc[yo + i]
            if n > 0 and tmp[n - 1] == (c ^ 1):
                n -= 1
            else:
                tmp[n] = c
                n += 1
        h1, h2 = _hash_codes(tmp, n)
        return word_key(h1, h2, n)
    k = 0
    while k < xl and xc[xo + xl - 1 - k] ^ 1 == a[k]:
        k += 1
    j = 0
    while j < yl and a[la - 1 - j] ^ 1 == yc[yo + j]:
        j += 1
    nl = xl - k
    nm = la - j - k
    nr = yl - j
    h1 = 0
    h2 = 0
    for i in range(nl):
        h1 = (h1 * HB + xc[xo + i] + 1) % P1
        h2 = (h2 * HB + xc[xo + i] + 1) % P2
    m1 = (H1[la - j] - H1[k] * pw1[nm]) % P1
    m2 = (H2[la - j] - H2[k] * pw2[nm]) % P2
    if m1 < 0:
        m1 += P1
    if m2 < 0:
        m2 += P2
    h1 = (h1 * pw1[nm] + m1) % P1
    h2 = (h2 * pw2[nm] + m2) % P2
    for i in range(nr):
        c = yc[yo + j + i]
        h1 = (h1 * HB + c + 1) % P1
        h2 = (h2 * HB + c + 1) % P2
    return word_key(h1, h2, nl + nm + nr)


@nb.njit(cache=True)
def in_target(a, la, H1, H2, pw1, pw2, seed, fc, fo, fl, gc, go, gl, fkeys, exclude_f, tmp):
    """Is the word a[:la] in the thinned target set?

    F is (fc, fo, fl); F squared is (gc, go, gl).  Checks, in order of cost:
    optional exclusion of F itself, maximality of U_a over F^2 a F^2 (ties
    broken by key), and F-switching of {a}.
    """
    h1 = H1[la]
    h2 = H2[la]
    ka = word_key(h1, h2, la)
    if exclude_f:
        for i in range(fkeys.shape[0]):
            if fkeys[i] == ka:
                return False
    ua = uniform_of(seed, ka)
    ng = go.shape[0]
    for x in range(ng):
        for y in range(ng):
            kb = _prod_key(gc, go[x], gl[x], a, la, H1, H2, pw1, pw2, gc, go[y], gl[y], tmp)
            if kb == ka:
                continue
            ub = uniform_of(seed, kb)
            if ub > ua or (ub == ua and kb > ka):
                return False
    nf = fo.shape[0]
    keys = np.empty(nf * nf, dtype=np.uint64)
    q = 0
    for x in range(nf):
        for y in range(nf):
            keys[q] = _prod_key(fc, fo[x], fl[x], a, la, H1, H2, pw1, pw2, fc, fo[y], fl[y], tmp)
            q += 1
    keys.sort()
    for i in range(1, keys.shape[0]):
        if keys[i] == keys[i - 1]:
            return False
    return True


@nb.njit(cache=True)
def switch_hit_run(st, cap, seed, fc, fo, fl, gc, go, gl, fkeys, exclude_f, pw1, pw2):
    """Walk the lazy free-group walk until its word lands in the target set.

    Returns (word, steps, truncated).
    """
    size = 64
    a = np.empty(size, dtype=np.int8)
    H1 = np.zeros(size + 1, dtype=np.int64)
    H2 = np.zeros(size + 1, dtype=np.int64)
    maxf = 0
    for i in range(gl.shape[0]):
        if gl[i] > maxf:
            maxf = gl[i]
    la = 0
    t = 0
    while t < cap:
        t += 1
        u = np.int64(next_u64(st) >> np.uint64(61))
        if u < 4:
            continue
        c = np.int8(u - 4)
        if la > 0 and a[la - 1] == (c ^ 1):
            la -= 1
        else:
            if la >= a.shape[0]:
                a = _grow_word(a)
                nH1 = np.zeros(a.shape[0] + 1, dtype=np.int64)
                nH2 = np.zeros(a.shape[0] + 1, dtype=np.int64)
                nH1[: H1.shape[0]] = H1
                nH2[: H2.shape[0]] = H2
                H1 = nH1
                H2 = nH2
            a[la] = c
            H1[la + 1] = (H1[la] * HB + c + 1) % P1
            H2[la + 1] = (H2[la] * HB + c + 1) % P2
            la += 1
        tmp = np.empty(la + 4 * maxf + 4, dtype=np.int8)
        if in_target(a, la, H1, H2, pw1, pw2, seed, fc, fo, fl, gc, go, gl, fkeys, exclude_f, tmp):
            return a[:la].copy(), t, False
    return a[:la].copy(), t, True


def powers(n: int):
    pw1 = np.ones(n + 1, dtype=np.int64)
    pw2 = np.ones(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        pw1[i] = pw1[i - 1] * HB % P1
        pw2[i] = pw2[i - 1] * HB % P2
    return pw1, pw2
