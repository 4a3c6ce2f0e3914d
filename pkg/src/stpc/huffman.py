"""Canonical Huffman coding over the byte alphabet.

The code table travels as 256 code lengths; codes are assigned canonically
(sorted by length then symbol, MSB-first), so encoder and decoder derive
identical codes from the lengths alone.  Lengths are capped at 32 bits;
the cap can only bind on pathological multi-megabyte distributions and is
repaired by demoting the deepest remaining symbols until the Kraft sum
fits.
"""

from __future__ import annotations

import heapq

import numpy as np

from . import _kernels
from .errors import MalformedBlobError, TruncatedBlobError

MAX_CODE_LEN = 32


def code_lengths_from_counts(freqs: np.ndarray) -> np.ndarray:
    """Huffman code length per symbol from frequency counts (0 = unused)."""
    lengths = np.zeros(256, dtype=np.uint8)
    present = np.nonzero(freqs)[0]
    if present.size == 0:
        return lengths
    if present.size == 1:
        lengths[present[0]] = 1
        return lengths

    # (weight, tiebreak, symbols-in-subtree); the serial tiebreak keeps the
    # tree, and therefore the emitted bytes, fully deterministic.
    heap = [(int(freqs[s]), int(s), [int(s)]) for s in present]
    heapq.heapify(heap)
    serial = 256
    depth = {int(s): 0 for s in present}
    while len(heap) > 1:
        w1, _, s1 = heapq.heappop(heap)
        w2, _, s2 = heapq.heappop(heap)
        for s in s1:
            depth[s] += 1
        for s in s2:
            depth[s] += 1
        heapq.heappush(heap, (w1 + w2, serial, s1 + s2))
        serial += 1
    for s, d in depth.items():
        lengths[s] = d

    if lengths.max() > MAX_CODE_LEN:
        lengths = np.minimum(lengths, MAX_CODE_LEN)
        kraft = np.sum(np.where(lengths > 0, 2.0 ** (-lengths.astype(np.float64)), 0.0))
        while kraft > 1.0 + 1e-12:
            candidates = np.nonzero((lengths > 0) & (lengths < MAX_CODE_LEN))[0]
            pick = candidates[np.argmax(lengths[candidates])]
            kraft -= 2.0 ** (-float(lengths[pick]))
            lengths[pick] += 1
            kraft += 2.0 ** (-float(lengths[pick]))
    return lengths


def canonical_codes(lengths: np.ndarray) -> np.ndarray:
    """Canonical code value per symbol (int64[256]) from code lengths."""
    order = sorted(np.nonzero(lengths)[0], key=lambda s: (lengths[s], s))
    codes = np.zeros(256, dtype=np.int64)
    code = 0
    prev_len = 0
    for s in order:
        ln = int(lengths[s])
        code <<= ln - prev_len
        if code >= (1 << ln):
            raise MalformedBlobError("Huffman code table overflows its lengths")
        codes[s] = code
        code += 1
        prev_len = ln
    return codes


def decode_tables(lengths: np.ndarray):
    """Decoder-side canonical tables: counts, first codes, offsets, symbols."""
    if lengths.shape != (256,):
        raise MalformedBlobError("Huffman table must hold 256 lengths")
    if int(lengths.max(initial=0)) > MAX_CODE_LEN:
        raise MalformedBlobError("Huffman code length exceeds 32 bits")
    count_by_len = np.zeros(MAX_CODE_LEN + 1, dtype=np.int64)
    for s in range(256):
        if lengths[s]:
            count_by_len[lengths[s]] += 1
    first_code = np.zeros(MAX_CODE_LEN + 1, dtype=np.int64)
    index_by_len = np.zeros(MAX_CODE_LEN + 1, dtype=np.int64)
    code = 0
    idx = 0
    for ln in range(1, MAX_CODE_LEN + 1):
        first_code[ln] = code
        index_by_len[ln] = idx
        if code + count_by_len[ln] > (1 << ln):
            raise MalformedBlobError("Huffman code table overflows its lengths")
        code = (code + count_by_len[ln]) << 1
        idx += count_by_len[ln]
    symbols = np.array(
        sorted(np.nonzero(lengths)[0], key=lambda s: (lengths[s], s)), dtype=np.uint8
    )
    return count_by_len, first_code, index_by_len, symbols


def encode_bytes(payload) -> tuple[np.ndarray, bytes]:
    """Huffman-encode bytes; returns (code lengths, encoded bytes)."""
    data = np.frombuffer(bytes(payload), dtype=np.uint8)
    if data.size == 0:
        return np.zeros(256, dtype=np.uint8), b""
    freqs = np.bincount(data, minlength=256)
    lengths = code_lengths_from_counts(freqs)
    codes = canonical_codes(lengths)
    worst = (int(np.max(lengths)) * data.size + 7) // 8 + 8
    out = np.empty(worst, dtype=np.uint8)
    n = _kernels.huffman_encode_kernel(data, codes, lengths.astype(np.int64), out)
    return lengths, out[:n].tobytes()


def decode_bytes(lengths: np.ndarray, encoded, n_symbols: int) -> bytes:
    """Inverse of encode_bytes given the code lengths and symbol count."""
    if n_symbols == 0:
        return b""
    count_by_len, first_code, index_by_len, symbols = decode_tables(lengths)
    if symbols.size == 0:
        raise MalformedBlobError("empty Huffman table for non-empty payload")
    enc = np.frombuffer(bytes(encoded), dtype=np.uint8)
    out = np.empty(n_symbols, dtype=np.uint8)
    rc = _kernels.huffman_decode_kernel(
        enc, n_symbols, count_by_len, first_code, index_by_len, symbols, out
    )
    if rc == 1:
        raise TruncatedBlobError("entropy payload ended mid-symbol")
    if rc != 0:
        raise MalformedBlobError("invalid Huffman code in payload")
    return out.tobytes()
