"""Bias removal and privacy amplification for distilled keys.

Two final classical steps share this module because both are hashing-like
transforms on bit arrays:

* :func:`peres_extract` — an iterated pairwise extractor that turns a
  biased-but-independent bit stream into nearly unbiased output.  The
  classic discard-agreements trick keeps only the first bit of each
  disagreeing pair; the iterated form additionally recurses on the two
  streams the plain trick throws away (the pair XORs, and the shared
  value of agreeing pairs), recovering most of the entropy the plain
  trick wastes.
* :func:`privacy_amplify` — two-universal hashing with a seeded Toeplitz
  matrix over GF(2), compressing a partially secret key to the length
  the finite-size analysis granted.
"""

from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np

from .core import ValidationError
from .stats import binary_entropy

__all__ = [
    "DeskewResult",
    "peres_extract",
    "measure_f_ds",
    "privacy_amplify",
]


def _as_bits(bits, name: str) -> np.ndarray:
    if isinstance(bits, str):
        try:
            arr = np.array([int(ch) for ch in bits], dtype=np.uint8)
        except ValueError as exc:
            raise ValidationError(f"{name}: bit strings may contain only 0/1") from exc
        return arr
    arr = np.asarray(bits)
    if arr.ndim != 1:
        raise ValidationError(f"{name}: expected a one-dimensional bit sequence")
    if arr.dtype == bool:
        return arr.astype(np.uint8)
    arr = arr.astype(np.uint8, copy=False)
    if arr.size and int(arr.max(initial=0)) > 1:
        raise ValidationError(f"{name}: bit values must be 0 or 1")
    return arr


@dataclass(frozen=True)
class DeskewResult:
    """Output of one deskewing run.

    ``f_ds`` is the entropy-payout ratio measured on this run: the binary
    entropy of the input's empirical zero fraction divided by the output
    rate (output bits per input bit).  A perfect extractor on an i.i.d.
    source would approach 1; ``math.inf`` when the run produced no output.
    """

    output_bits: np.ndarray
    input_length: int
    iteration_depth: int
    f_ds: float


def _peres(bits: np.ndarray, depth: int, chunks: list[np.ndarray]) -> None:
    """Append this level's extracted streams to ``chunks`` (fixed order:
    von Neumann output first, then the recursion on the pair-XOR stream,
    then the recursion on the agreed-values stream)."""
    if depth <= 0 or bits.size < 2:
        return
    m = bits.size // 2
    first = bits[0 : 2 * m : 2]
    second = bits[1 : 2 * m : 2]
    xors = first ^ second
    disagree = xors == 1
    chunks.append(first[disagree])
    _peres(xors, depth - 1, chunks)
    _peres(first[~disagree], depth - 1, chunks)


def peres_extract(bits, depth: int = 12) -> DeskewResult:
    """Extract nearly unbiased bits from an independent, biased stream.

    Parameters
    ----------
    bits : array-like or str of 0/1
        Input bit stream.  Bits must be independent for the output to be
        unbiased; correlations survive the transform.
    depth : int
        Recursion depth.  Depth 1 is the plain discard-agreements
        extractor with output rate p(1-p); each extra level recurses on
        both discarded streams.  For an unbiased source the expected
        output rate at depth d is 1 - 0.75^d, so rate loss falls below
        ~3.2% from depth 12 on, which is the default.  Output length is
        non-decreasing in depth.

    Returns
    -------
    DeskewResult

    Raises
    ------
    ValidationError
        If ``depth < 1`` or the input is empty.
    """
    arr = _as_bits(bits, "bits")
    if depth < 1:
        raise ValidationError("depth must be >= 1")
    if arr.size < 2:
        raise ValidationError("need at least one pair of bits to deskew")
    chunks: list[np.ndarray] = []
    _peres(arr, depth, chunks)
    out = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.uint8)
    zero_fraction = float(np.count_nonzero(arr == 0)) / arr.size
    rate = out.size / arr.size
    f_ds = binary_entropy(zero_fraction) / rate if rate > 0 else math.inf
    return DeskewResult(
        output_bits=out,
        input_length=int(arr.size),
        iteration_depth=depth,
        f_ds=f_ds,
    )


def measure_f_ds(result: DeskewResult, zero_fraction: float) -> float:
    """Deskewing overhead against a stated source bias.

    Divides the entropy per input bit, ``H2(zero_fraction)``, by the
    achieved output rate.  Values near 1 mean the extractor paid out
    almost all the entropy the source carried; the key-length formula
    charges the analysis with exactly this ratio.

    Returns ``math.inf`` (undefined overhead) when the run produced no
    output bits.
    """
    if not 0.0 < zero_fraction < 1.0:
        raise ValidationError("zero_fraction must lie strictly between 0 and 1")
    if result.output_bits.size == 0:
        return math.inf
    rate = result.output_bits.size / result.input_length
    return binary_entropy(zero_fraction) / rate


def privacy_amplify(key, target_length: int, seed: int) -> np.ndarray:
    """Compress ``key`` to ``target_length`` bits with a seeded Toeplitz hash.

    The hash matrix ``T`` (``target_length`` x ``n``) is filled from
    ``n + target_length - 1`` seed bits drawn from
    ``numpy.random.default_rng(seed)``; entry ``T[i, j]`` is seed bit
    ``i + (n - 1) - j``, so each diagonal is constant.  The output is
    ``T @ key`` over GF(2), computed row-wise with big-integer AND /
    popcount, which keeps the whole transform exactly linear:
    ``hash(a XOR b) == hash(a) XOR hash(b)`` for keys hashed with the
    same seed.

    Parameters
    ----------
    key : array-like or str of 0/1
    target_length : int
        Desired output length, at most ``len(key)``.  Zero or negative
        yields an empty array — a valid zero-key session, not an error.
    seed : int
        Seed for the hash matrix; both parties must use the same one.

    Returns
    -------
    numpy.ndarray
        ``target_length`` hashed bits (uint8).
    """
    arr = _as_bits(key, "key")
    n = int(arr.size)
    if target_length > n:
        raise ValidationError("target_length cannot exceed the key length")
    if target_length <= 0:
        return np.zeros(0, dtype=np.uint8)

    seed_bits = np.random.default_rng(seed).integers(
        0, 2, n + target_length - 1, dtype=np.uint8
    )
    seed_int = int.from_bytes(np.packbits(seed_bits, bitorder="little").tobytes(), "little")
    # Row i of T reads seed bits [i, i + n) against the reversed key, so the
    # GF(2) dot product is a popcount of (reversed key) AND (seed >> i).
    rev = arr[::-1]
    key_int = int.from_bytes(np.packbits(rev, bitorder="little").tobytes(), "little")
    out = np.empty(target_length, dtype=np.uint8)
    for i in range(target_length):
        out[i] = ((seed_int >> i) & key_int).bit_count() & 1
    return out
