"""JIT kernels for the hot encode/decode loops.

Everything here is deliberately scalar and sequential: plane-fit moments
are accumulated left to right over pixels in raster order inside each
tile, tiles left to right inside each run.  That fixed order is what makes
encoder output independent of how rows are distributed across worker
threads.  All kernels release the GIL so tile-rows can run in parallel
from a plain thread pool.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# Moment vector layout for the 3x3 plane normal equations:
# [Syy, Syz, Szz, Sy, Sz, Sxy, Sxz, Sx, N]
N_SUMS = 9

PARALLEL_EPS = 1e-12


@njit(cache=True, nogil=True)
def plane_from_sums(syy, syz, szz, sy, sz, sxy, sxz, sx, n, cond_limit):
    """Solve the normal equations of min sum (x + a*y + b*z - c)^2.

    Returns (a, b, c, ok); ok is False when the 3x3 system is singular or
    its 1-norm condition estimate exceeds cond_limit.
    """
    m00 = syy
    m01 = syz
    m02 = -sy
    m11 = szz
    m12 = -sz
    m22 = n
    r0 = -sxy
    r1 = -sxz
    r2 = sx

    c00 = m11 * m22 - m12 * m12
    c01 = m02 * m12 - m01 * m22
    c02 = m01 * m12 - m02 * m11
    det = m00 * c00 + m01 * c01 + m02 * c02
    if det == 0.0 or not np.isfinite(det):
        return 0.0, 0.0, 0.0, False
    c11 = m00 * m22 - m02 * m02
    c12 = m01 * m02 - m00 * m12
    c22 = m00 * m11 - m01 * m01

    i00 = c00 / det
    i01 = c01 / det
    i02 = c02 / det
    i11 = c11 / det
    i12 = c12 / det
    i22 = c22 / det

    norm_m = max(
        abs(m00) + abs(m01) + abs(m02),
        abs(m01) + abs(m11) + abs(m12),
        abs(m02) + abs(m12) + abs(m22),
    )
    norm_i = max(
        abs(i00) + abs(i01) + abs(i02),
        abs(i01) + abs(i11) + abs(i12),
        abs(i02) + abs(i12) + abs(i22),
    )
    cond = norm_m * norm_i
    if not np.isfinite(cond) or cond > cond_limit:
        return 0.0, 0.0, 0.0, False

    a = i00 * r0 + i01 * r1 + i02 * r2
    b = i01 * r0 + i11 * r1 + i12 * r2
    c = i02 * r0 + i12 * r1 + i22 * r2
    if not (np.isfinite(a) and np.isfinite(b) and np.isfinite(c)):
        return 0.0, 0.0, 0.0, False
    return a, b, c, True


@njit(cache=True, nogil=True)
def accumulate_moments(dx, dy, dz, rr):
    """Left-to-right moment accumulation over (direction, range) samples."""
    syy = 0.0
    syz = 0.0
    szz = 0.0
    sy = 0.0
    sz = 0.0
    sxy = 0.0
    sxz = 0.0
    sx = 0.0
    n = 0.0
    for i in range(rr.shape[0]):
        r = rr[i]
        x = r * dx[i]
        y = r * dy[i]
        z = r * dz[i]
        syy += y * y
        syz += y * z
        szz += z * z
        sy += y
        sz += z
        sxy += x * y
        sxz += x * z
        sx += x
        n += 1.0
    return syy, syz, szz, sy, sz, sxy, sxz, sx, n


@njit(cache=True, nogil=True)
def _add_tile(rng, msk, dirs, t, tile_w, sums):
    th, w = rng.shape
    u0 = t * tile_w
    u1 = min(u0 + tile_w, w)
    for v in range(th):
        for u in range(u0, u1):
            if msk[v, u]:
                r = rng[v, u]
                x = r * dirs[v, u, 0]
                y = r * dirs[v, u, 1]
                z = r * dirs[v, u, 2]
                sums[0] += y * y
                sums[1] += y * z
                sums[2] += z * z
                sums[3] += y
                sums[4] += z
                sums[5] += x * y
                sums[6] += x * z
                sums[7] += x
                sums[8] += 1.0


@njit(cache=True, nogil=True)
def _span_ok(rng, msk, dirs, t0, t1, tile_w, a, b, c, tau, r_max):
    """True iff every valid pixel in tiles [t0, t1) passes the fit test."""
    th, w = rng.shape
    u0 = t0 * tile_w
    u1 = min(t1 * tile_w, w)
    for v in range(th):
        for u in range(u0, u1):
            if msk[v, u]:
                den = dirs[v, u, 0] + a * dirs[v, u, 1] + b * dirs[v, u, 2]
                if abs(den) < PARALLEL_EPS:
                    return False
                r_hat = c / den
                if r_hat <= 0.0 or r_hat > r_max:
                    return False
                if abs(rng[v, u] - r_hat) > tau:
                    return False
    return True


@njit(cache=True, nogil=True)
def encode_tile_row(
    rng, msk, dirs, tile_w, tau, r_max, cond_limit, run_s, run_len, run_abc, resid
):
    """Greedy horizontal run growth over one row of tiles.

    rng/msk/dirs are the (tile_h, w) slabs of one tile-row.  Each run
    starts from a tile whose own plane fit passes tau, then extends one
    tile at a time; every extension refits on the whole union and is
    accepted only if every valid pixel of the union still passes.  Tiles
    whose initial fit fails are flagged in ``resid``.  Plane coefficients
    are rounded through float32 before testing so the decoder (which reads
    float32) sees exactly the residuals the encoder bounded.

    Returns the number of runs written into run_s/run_len/run_abc.
    """
    th, w = rng.shape
    tiles_x = (w + tile_w - 1) // tile_w
    sums = np.zeros(N_SUMS, np.float64)
    saved = np.zeros(N_SUMS, np.float64)
    n_runs = 0
    t = 0
    while t < tiles_x:
        for k in range(N_SUMS):
            sums[k] = 0.0
        _add_tile(rng, msk, dirs, t, tile_w, sums)
        ok = False
        a = 0.0
        b = 0.0
        c = 0.0
        if sums[8] >= 3.0:
            a, b, c, ok = plane_from_sums(
                sums[0], sums[1], sums[2], sums[3], sums[4],
                sums[5], sums[6], sums[7], sums[8], cond_limit,
            )
            if ok:
                a = np.float64(np.float32(a))
                b = np.float64(np.float32(b))
                c = np.float64(np.float32(c))
                ok = _span_ok(rng, msk, dirs, t, t + 1, tile_w, a, b, c, tau, r_max)
        if not ok:
            resid[t] = True
            t += 1
            continue

        s = t
        e = t + 1
        while e < tiles_x:
            for k in range(N_SUMS):
                saved[k] = sums[k]
            _add_tile(rng, msk, dirs, e, tile_w, sums)
            na, nb, nc, ok2 = plane_from_sums(
                sums[0], sums[1], sums[2], sums[3], sums[4],
                sums[5], sums[6], sums[7], sums[8], cond_limit,
            )
            if ok2:
                na = np.float64(np.float32(na))
                nb = np.float64(np.float32(nb))
                nc = np.float64(np.float32(nc))
                ok2 = _span_ok(rng, msk, dirs, s, e + 1, tile_w, na, nb, nc, tau, r_max)
            if ok2:
                a = na
                b = nb
                c = nc
                e += 1
            else:
                for k in range(N_SUMS):
                    sums[k] = saved[k]
                break

        run_s[n_runs] = s
        run_len[n_runs] = e - s
        run_abc[n_runs, 0] = a
        run_abc[n_runs, 1] = b
        run_abc[n_runs, 2] = c
        n_runs += 1
        t = e
    return n_runs


@njit(cache=True, nogil=True)
def refit_spans(
    rng, msk, dirs, tile_w, span_s, span_len, span_abc, tau, r_max, out_ok, out_c
):
    """Constant-normal offset refit of key-frame runs against one channel.

    For each span the offset is the left-to-right mean of r * (d . n) over
    the channel's valid pixels in the span, rounded through float32, then
    the whole span is re-tested against tau with the normal held fixed.
    Spans with no valid pixels in this channel report ok=False.
    """
    th, w = rng.shape
    for i in range(span_s.shape[0]):
        a = span_abc[i, 0]
        b = span_abc[i, 1]
        u0 = span_s[i] * tile_w
        u1 = min((span_s[i] + span_len[i]) * tile_w, w)
        acc = 0.0
        cnt = 0.0
        for v in range(th):
            for u in range(u0, u1):
                if msk[v, u]:
                    den = dirs[v, u, 0] + a * dirs[v, u, 1] + b * dirs[v, u, 2]
                    acc += rng[v, u] * den
                    cnt += 1.0
        if cnt == 0.0:
            out_ok[i] = False
            out_c[i] = 0.0
            continue
        c = np.float64(np.float32(acc / cnt))
        ok = True
        for v in range(th):
            if not ok:
                break
            for u in range(u0, u1):
                if msk[v, u]:
                    den = dirs[v, u, 0] + a * dirs[v, u, 1] + b * dirs[v, u, 2]
                    if abs(den) < PARALLEL_EPS:
                        ok = False
                        break
                    r_hat = c / den
                    if r_hat <= 0.0 or r_hat > r_max:
                        ok = False
                        break
                    if abs(rng[v, u] - r_hat) > tau:
                        ok = False
                        break
        out_ok[i] = ok
        out_c[i] = c


@njit(cache=True, nogil=True)
def reconstruct_span(rng_out, msk_out, allowed, dirs, v0, u0, u1, a, b, c, r_max):
    """Fill plane-reconstructed ranges for allowed pixels of one slab.

    Returns the number of allowed pixels whose reconstruction failed
    (parallel ray, behind sensor, or beyond r_max); those stay invalid.
    """
    th = allowed.shape[0]
    failed = 0
    for v in range(th):
        for u in range(u0, u1):
            if allowed[v, u - u0]:
                den = (
                    dirs[v0 + v, u, 0]
                    + a * dirs[v0 + v, u, 1]
                    + b * dirs[v0 + v, u, 2]
                )
                if abs(den) < PARALLEL_EPS:
                    failed += 1
                    continue
                r_hat = c / den
                if r_hat <= 0.0 or r_hat > r_max:
                    failed += 1
                    continue
                rng_out[v0 + v, u] = r_hat
                msk_out[v0 + v, u] = True
    return failed


@njit(cache=True, nogil=True)
def project_kernel(pts, theta_r, phi_r, phi_offset, w, h, best, win):
    """Spherical projection with nearest-point collision handling.

    best is a flat (h*w) range grid prefilled with +inf, win the winning
    source index per pixel (-1 where empty).  The minimum per pixel makes
    the resulting grid independent of point order.

    Returns (rejected, dropped, kept): non-finite or zero points, points
    whose row falls outside [0, h), and points binned into the grid.
    """
    two_pi = 2.0 * np.pi
    rejected = 0
    dropped = 0
    kept = 0
    for i in range(pts.shape[0]):
        x = pts[i, 0]
        y = pts[i, 1]
        z = pts[i, 2]
        if not (np.isfinite(x) and np.isfinite(y) and np.isfinite(z)):
            rejected += 1
            continue
        r = np.sqrt(x * x + y * y + z * z)
        if r <= 0.0:
            rejected += 1
            continue
        theta = np.arctan2(x, y)
        if theta < 0.0:
            theta += two_pi
        u = np.int64(np.floor(theta / theta_r)) % w
        cz = z / r
        if cz > 1.0:
            cz = 1.0
        elif cz < -1.0:
            cz = -1.0
        v = np.int64(np.floor((np.arccos(cz) - phi_offset) / phi_r))
        if v < 0 or v >= h:
            dropped += 1
            continue
        kept += 1
        f = v * w + u
        if r < best[f]:
            best[f] = r
            win[f] = i
    return rejected, dropped, kept


# ---------------------------------------------------------------------------
# Canonical Huffman bit packing (MSB-first) and LEB128 varints.
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def huffman_encode_kernel(data, code_vals, code_lens, out):
    """Pack symbols into canonical-code bits; returns bytes written."""
    acc = 0
    nbits = 0
    pos = 0
    for i in range(data.shape[0]):
        s = data[i]
        ln = code_lens[s]
        acc = (acc << ln) | code_vals[s]
        nbits += ln
        while nbits >= 8:
            nbits -= 8
            out[pos] = np.uint8((acc >> nbits) & 0xFF)
            pos += 1
        acc &= (1 << nbits) - 1
    if nbits > 0:
        out[pos] = np.uint8((acc << (8 - nbits)) & 0xFF)
        pos += 1
    return pos


@njit(cache=True, nogil=True)
def huffman_decode_kernel(
    enc, n_symbols, count_by_len, first_code_by_len, index_by_len, symbols_sorted, out
):
    """Decode n_symbols canonical-coded symbols.

    Returns 0 on success, 1 if the bitstream ran out, 2 on an impossible
    code (corrupt table or payload).
    """
    bitpos = 0
    total_bits = enc.shape[0] * 8
    max_len = count_by_len.shape[0] - 1
    for i in range(n_symbols):
        code = 0
        length = 0
        while True:
            if bitpos >= total_bits:
                return 1
            byte = enc[bitpos >> 3]
            bit = (byte >> (7 - (bitpos & 7))) & 1
            bitpos += 1
            code = (code << 1) | bit
            length += 1
            if length > max_len:
                return 2
            cnt = count_by_len[length]
            if cnt > 0:
                fc = first_code_by_len[length]
                off = code - fc
                if 0 <= off < cnt:
                    out[i] = symbols_sorted[index_by_len[length] + off]
                    break
    return 0


@njit(cache=True, nogil=True)
def varint_encode_kernel(values, out):
    """LEB128-encode non-negative int64 values; returns bytes written."""
    pos = 0
    for i in range(values.shape[0]):
        v = values[i]
        while v >= 128:
            out[pos] = np.uint8((v & 0x7F) | 0x80)
            v >>= 7
            pos += 1
        out[pos] = np.uint8(v)
        pos += 1
    return pos


@njit(cache=True, nogil=True)
def varint_decode_kernel(buf, start, count, out):
    """Decode ``count`` LEB128 values from buf[start:].

    Returns the position after the last byte consumed, or -1 on overrun
    or overlong encoding.
    """
    pos = start
    n = buf.shape[0]
    for i in range(count):
        shift = 0
        val = 0
        while True:
            if pos >= n:
                return -1
            byte = buf[pos]
            pos += 1
            val |= np.int64(byte & 0x7F) << shift
            if byte < 128:
                break
            shift += 7
            if shift > 63:
                return -1
        out[i] = val
    return pos
