"""Batched simulation kernels behind the Monte Carlo estimators.

Two sweeps over a replicate range, both consuming exactly the per-replicate
counter-based streams defined in :mod:`brwlimit.rng`:

* mass sweep: tracks only the particle count per generation (offspring-count
  draws are evaluated, step draws are skipped by advancing the counter), so
  it reproduces bit-identical counts to the full simulation;
* fourier sweep: tracks particle positions and records aggregated Fourier
  sums ``sum_sites count * e^{i phase}`` at requested (generation, frequency)
  slots, plus counts and extinction generations.

Stream layout per generation: one uniform per particle for its offspring
count (particles in lexicographic site order), then one uniform per offspring
for its step (offspring in parent order).  Replicates are processed in
fixed-size chunks; chunk boundaries do not depend on the worker count, so
results are bit-identical for any number of threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numba import njit
from numba import types  # noqa: F401  (kept for explicit signature work if needed)

from .rng import derive_keys

CHUNK = 1 << 16

U64 = np.uint64
_U53_INV = 1.0 / 9007199254740992.0


@njit(inline="always")
def _mulhi(a, b):
    m32 = U64(0xFFFFFFFF)
    ah = a >> U64(32)
    al = a & m32
    bh = b >> U64(32)
    bl = b & m32
    t = ah * bl + ((al * bl) >> U64(32))
    u = al * bh + (t & m32)
    return ah * bh + (t >> U64(32)) + (u >> U64(32))


@njit(inline="always")
def _philox_block(b, k0, k1):
    m0 = U64(0xD2E7470EE14C6C93)
    m1 = U64(0xCA5A826395121157)
    w0c = U64(0x9E3779B97F4A7C15)
    w1c = U64(0xBB67AE8584CAA73B)
    x0 = b
    x1 = U64(0)
    x2 = U64(0)
    x3 = U64(0)
    for r in range(10):
        if r > 0:
            k0 = k0 + w0c
            k1 = k1 + w1c
        hi0 = _mulhi(m0, x0)
        lo0 = m0 * x0
        hi1 = _mulhi(m1, x2)
        lo1 = m1 * x2
        x0, x1, x2, x3 = hi1 ^ x1 ^ k0, lo1, hi0 ^ x3 ^ k1, lo0
    return x0, x1, x2, x3


@njit(inline="always")
def _draw(c, blk, w0, w1, w2, w3, k0, k1):
    b = c >> U64(2)
    if b != blk:
        w0, w1, w2, w3 = _philox_block(b, k0, k1)
        blk = b
    lane = c & U64(3)
    if lane == U64(0):
        w = w0
    elif lane == U64(1):
        w = w1
    elif lane == U64(2):
        w = w2
    else:
        w = w3
    u = np.float64(w >> U64(11)) * _U53_INV
    return u, c + U64(1), blk, w0, w1, w2, w3


@njit(nogil=True, cache=True)
def _mass_kernel(key0, key1, horizon, cdf, max_count, record_gens, z_out, extinct_out):
    nrep = key0.shape[0]
    nrec = record_gens.shape[0]
    for i in range(nrep):
        k0 = key0[i]
        k1 = key1[i]
        c = U64(0)
        blk = U64(0xFFFFFFFFFFFFFFFF)
        w0 = U64(0)
        w1 = U64(0)
        w2 = U64(0)
        w3 = U64(0)
        z = 1
        ext = -1
        ri = 0
        while ri < nrec and record_gens[ri] == 0:
            z_out[i, ri] = z
            ri += 1
        for g in range(1, horizon + 1):
            if z == 0:
                break
            znew = 0
            for _ in range(z):
                u, c, blk, w0, w1, w2, w3 = _draw(c, blk, w0, w1, w2, w3, k0, k1)
                cnt = np.searchsorted(cdf, u, side="right")
                if cnt > max_count:
                    cnt = max_count
                znew += cnt
            c = c + U64(znew)  # skip the step draws
            z = znew
            if z == 0:
                ext = g
            while ri < nrec and record_gens[ri] == g:
                z_out[i, ri] = z
                ri += 1
        while ri < nrec:
            z_out[i, ri] = 0 if ext >= 0 else z
            ri += 1
        extinct_out[i] = ext


@njit(nogil=True, cache=True)
def _fourier_kernel(key0, key1, horizon, cdf, max_count, support, pack_offset,
                    strides, scale, slot_gens, slot_w, slot_mode,
                    record_gens, slot_re, slot_im, z_out, extinct_out):
    nrep = key0.shape[0]
    nrec = record_gens.shape[0]
    nslots = slot_gens.shape[0]
    d = support.shape[1]
    nsites = support.shape[0]
    for i in range(nrep):
        k0 = key0[i]
        k1 = key1[i]
        c = U64(0)
        blk = U64(0xFFFFFFFFFFFFFFFF)
        w0 = U64(0)
        w1 = U64(0)
        w2 = U64(0)
        w3 = U64(0)
        cap = 64
        pos = np.zeros((cap, d), np.int64)
        counts_buf = np.empty(cap, np.int64)
        keys_buf = np.empty(cap, np.int64)
        z = 1
        ext = -1
        ri = 0
        for g in range(horizon + 1):
            if z == 0:
                break
            # canonical order: sort particles by lexicographic site key
            if z > 1:
                if keys_buf.shape[0] < z:
                    keys_buf = np.empty(z, np.int64)
                for p in range(z):
                    key = np.int64(0)
                    for j in range(d):
                        key += (pos[p, j] + pack_offset) * strides[j]
                    keys_buf[p] = key
                order = np.argsort(keys_buf[:z])
                tmp = np.empty((z, d), np.int64)
                for p in range(z):
                    src = order[p]
                    for j in range(d):
                        tmp[p, j] = pos[src, j]
                for p in range(z):
                    for j in range(d):
                        pos[p, j] = tmp[p, j]
            # evaluate slots at this generation on aggregated occupancy
            any_slot = False
            for s in range(nslots):
                if slot_gens[s] == g:
                    any_slot = True
                    break
            if any_slot:
                p = 0
                while p < z:
                    q = p + 1
                    while q < z:
                        same = True
                        for j in range(d):
                            if pos[q, j] != pos[p, j]:
                                same = False
                                break
                        if not same:
                            break
                        q += 1
                    cnt = np.float64(q - p)
                    for s in range(nslots):
                        if slot_gens[s] != g:
                            continue
                        phase = 0.0
                        if slot_mode[s] == 0:
                            for j in range(d):
                                phase += slot_w[s, j] * (np.float64(pos[p, j]) / scale)
                        else:
                            for j in range(d):
                                phase += slot_w[s, j] * np.float64(pos[p, j])
                        slot_re[i, s] += cnt * np.cos(phase)
                        slot_im[i, s] += cnt * np.sin(phase)
                    p = q
            while ri < nrec and record_gens[ri] == g:
                z_out[i, ri] = z
                ri += 1
            if g == horizon:
                break
            # offspring counts, particles in canonical order
            if counts_buf.shape[0] < z:
                counts_buf = np.empty(z, np.int64)
            znew = 0
            for p in range(z):
                u, c, blk, w0, w1, w2, w3 = _draw(c, blk, w0, w1, w2, w3, k0, k1)
                cnt = np.searchsorted(cdf, u, side="right")
                if cnt > max_count:
                    cnt = max_count
                counts_buf[p] = cnt
                znew += cnt
            if znew == 0:
                z = 0
                ext = g + 1
                break
            newcap = pos.shape[0]
            while newcap < znew:
                newcap *= 2
            newpos = np.empty((newcap, d), np.int64)
            o = 0
            for p in range(z):
                for _ in range(counts_buf[p]):
                    u, c, blk, w0, w1, w2, w3 = _draw(c, blk, w0, w1, w2, w3, k0, k1)
                    idx = np.int64(u * nsites)
                    if idx > nsites - 1:
                        idx = nsites - 1
                    for j in range(d):
                        newpos[o, j] = pos[p, j] + support[idx, j]
                    o += 1
            pos = newpos
            z = znew
        while ri < nrec:
            z_out[i, ri] = 0 if ext >= 0 else z
            ri += 1
        extinct_out[i] = ext


def _chunk_bounds(n_replicates: int):
    return [(lo, min(lo + CHUNK, n_replicates)) for lo in range(0, n_replicates, CHUNK)]


def _run_chunked(n_replicates: int, threads: int, task):
    """Run ``task(lo, hi)`` over fixed chunks; completion order irrelevant."""
    bounds = _chunk_bounds(n_replicates)
    if threads <= 1 or len(bounds) <= 1:
        for lo, hi in bounds:
            task(lo, hi)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(task, lo, hi) for lo, hi in bounds]
        for f in futures:
            f.result()


def mass_sweep(law, master_seed: int, n: int, replicates: int, horizon: int,
               record_gens, threads: int = 1):
    """Counts at the requested generations plus extinction generation.

    Returns ``(z, extinct)`` with ``z`` of shape (replicates, len(record_gens))
    and ``extinct[i]`` the first empty generation or -1 if alive at horizon.
    """
    record = np.asarray(sorted(set(int(g) for g in record_gens)), dtype=np.int64)
    if record.size and (record[0] < 0 or record[-1] > horizon):
        raise ValueError("record generations must lie in [0, horizon]")
    z = np.zeros((replicates, len(record)), dtype=np.int64)
    extinct = np.full(replicates, -1, dtype=np.int64)
    cdf = law.cdf
    max_count = len(law.pmf) - 1

    def task(lo, hi):
        k0, k1 = derive_keys(master_seed, n, lo, hi)
        _mass_kernel(k0, k1, horizon, cdf, max_count, record, z[lo:hi], extinct[lo:hi])

    _run_chunked(replicates, threads, task)
    return record, z, extinct


def fourier_chunks(law, kernel, master_seed: int, n: int, replicates: int, horizon: int,
                   slots, record_gens, scale: float, threads: int = 1):
    """Iterate fourier-sweep results chunk by chunk, in replicate order.

    ``slots`` is a list of ``(generation, coefficient_vector, mode)`` with
    mode 0 meaning phase = w . (x / scale) and mode 1 meaning phase = w . x.
    Yields ``(lo, hi, slot_re, slot_im, record, z, extinct)`` per chunk.
    """
    d = kernel.dimension
    record = np.asarray(sorted(set(int(g) for g in record_gens)), dtype=np.int64)
    slot_gens = np.array([int(g) for g, _, _ in slots], dtype=np.int64)
    slot_w = np.array([np.asarray(w, dtype=np.float64) for _, w, _ in slots],
                      dtype=np.float64).reshape(len(slots), d)
    slot_mode = np.array([int(m) for _, _, m in slots], dtype=np.int8)
    if slot_gens.size and (slot_gens.min() < 0 or slot_gens.max() > horizon):
        raise ValueError("slot generations must lie in [0, horizon]")

    pack_offset = np.int64(horizon * kernel.max_coordinate)
    base = 2 * int(pack_offset) + 1
    if base ** d >= 2 ** 62:
        raise ValueError("horizon/dimension too large for position packing")
    strides = np.empty(d, dtype=np.int64)
    strides[d - 1] = 1
    for j in range(d - 2, -1, -1):
        strides[j] = strides[j + 1] * base

    cdf = law.cdf
    max_count = len(law.pmf) - 1
    support = kernel.support

    bounds = _chunk_bounds(replicates)

    def make(lo, hi):
        m = hi - lo
        sre = np.zeros((m, len(slots)), dtype=np.float64)
        sim = np.zeros((m, len(slots)), dtype=np.float64)
        z = np.zeros((m, len(record)), dtype=np.int64)
        extinct = np.full(m, -1, dtype=np.int64)
        k0, k1 = derive_keys(master_seed, n, lo, hi)
        _fourier_kernel(k0, k1, horizon, cdf, max_count, support, pack_offset,
                        strides, scale, slot_gens, slot_w, slot_mode,
                        record, sre, sim, z, extinct)
        return sre, sim, z, extinct

    if threads <= 1 or len(bounds) <= 1:
        for lo, hi in bounds:
            sre, sim, z, extinct = make(lo, hi)
            yield lo, hi, sre, sim, record, z, extinct
        return

    window = threads + 2
    with ThreadPoolExecutor(max_workers=threads) as pool:
        pending = []
        it = iter(bounds)
        for _ in range(window):
            nxt = next(it, None)
            if nxt is None:
                break
            pending.append((nxt, pool.submit(make, *nxt)))
        while pending:
            (lo, hi), fut = pending.pop(0)
            sre, sim, z, extinct = fut.result()
            nxt = next(it, None)
            if nxt is not None:
                pending.append((nxt, pool.submit(make, *nxt)))
            yield lo, hi, sre, sim, record, z, extinct
