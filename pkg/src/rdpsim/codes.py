"""Forward error correction: per-byte extended Hamming SEC-DED and ABFT checksums.

The Hamming layout is the textbook one.  Codeword bit ``p-1`` holds Hamming
position ``p`` for ``p`` in 1..12: parity bits sit at positions 1, 2, 4 and 8,
data bits fill 3, 5, 6, 7, 9, 10, 11, 12 (LSB first).  Bit 12 holds the
overall parity over the first twelve bits, which upgrades SEC to SEC-DED.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

K_DATA = 8
R_CHECK = 5
N_CODE = K_DATA + R_CHECK

DATA_POSITIONS = (3, 5, 6, 7, 9, 10, 11, 12)
PARITY_POSITIONS = (1, 2, 4, 8)
OVERALL_BIT = 12  # codeword bit index of the overall parity


@dataclass(frozen=True)
class CodeSpec:
    k: int = K_DATA
    r: int = R_CHECK

    @property
    def n(self) -> int:
        return self.k + self.r


CLEAN = "clean"
CORRECTED = "corrected"
DUE = "detected-uncorrectable"


@dataclass(frozen=True)
class DecodeResult:
    data: int
    status: str
    position: Optional[int] = None  # codeword bit index that was corrected


def _encode_scalar(byte: int) -> int:
    word = 0
    for i, pos in enumerate(DATA_POSITIONS):
        if (byte >> i) & 1:
            word |= 1 << (pos - 1)
    for p in PARITY_POSITIONS:
        parity = 0
        for pos in range(1, 13):
            if pos & p and (word >> (pos - 1)) & 1:
                parity ^= 1
        if parity:
            word |= 1 << (p - 1)
    if bin(word).count("1") & 1:
        word |= 1 << OVERALL_BIT
    return word


def _extract_data(word: int) -> int:
    byte = 0
    for i, pos in enumerate(DATA_POSITIONS):
        if (word >> (pos - 1)) & 1:
            byte |= 1 << i
    return byte


def _decode_scalar(word: int) -> DecodeResult:
    syndrome = 0
    for pos in range(1, 13):
        if (word >> (pos - 1)) & 1:
            syndrome ^= pos
    overall = bin(word & 0x1FFF).count("1") & 1
    if syndrome == 0 and overall == 0:
        return DecodeResult(_extract_data(word), CLEAN)
    if overall == 1:
        if syndrome == 0:
            # only the overall parity bit itself flipped
            return DecodeResult(_extract_data(word), CORRECTED, OVERALL_BIT)
        if syndrome <= 12:
            fixed = word ^ (1 << (syndrome - 1))
            return DecodeResult(_extract_data(fixed), CORRECTED, syndrome - 1)
        # syndrome points outside the word: odd multi-bit error
        return DecodeResult(_extract_data(word), DUE)
    return DecodeResult(_extract_data(word), DUE)


ENCODE_TABLE = np.array([_encode_scalar(v) for v in range(256)], dtype=np.uint16)
_DECODE_TABLE = [_decode_scalar(w) for w in range(1 << N_CODE)]
_DECODE_DATA = np.array([d.data for d in _DECODE_TABLE], dtype=np.uint8)
_DECODE_STATUS = np.array([{CLEAN: 0, CORRECTED: 1, DUE: 2}[d.status] for d in _DECODE_TABLE], dtype=np.uint8)


def hamming_encode(byte: int) -> int:
    if not 0 <= byte <= 255:
        raise ValueError(f"byte out of range: {byte}")
    return int(ENCODE_TABLE[byte])


def hamming_decode(codeword: int) -> DecodeResult:
    if not 0 <= codeword < (1 << N_CODE):
        raise ValueError(f"codeword must fit in {N_CODE} bits: {codeword}")
    return _DECODE_TABLE[codeword]


def codeword_data_bit(data_bit: int) -> int:
    """Codeword bit index carrying data bit ``data_bit`` (0 = LSB)."""
    return DATA_POSITIONS[data_bit] - 1


class EccShadow:
    """Check-bit store for a byte buffer, one 13-bit codeword per data byte.

    The shadow is refreshed on legitimate writes; corruption is anything that
    changes the data bytes behind its back.
    """

    def __init__(self, data: np.ndarray):
        self.codewords = ENCODE_TABLE[self._view(data)].copy()

    @staticmethod
    def _view(data: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(data).reshape(-1).view(np.uint8)

    def refresh(self, data: np.ndarray) -> None:
        self.codewords[:] = ENCODE_TABLE[self._view(data)]

    def check(self, data: np.ndarray, byte_indices: Sequence[int]) -> list[tuple[int, str, Optional[int]]]:
        """Decode the listed bytes; corrected bytes are written back into ``data``.

        Returns ``(byte_index, status, corrected_bit)`` per inspected byte.
        """
        raw = data.reshape(-1).view(np.uint8)
        out = []
        for idx in sorted(set(int(i) for i in byte_indices)):
            stored = int(self.codewords[idx])
            current = int(raw[idx])
            # rebuild the received word: stored parity bits + current data bits
            word = stored & ~_DATA_MASK & 0x1FFF
            word |= int(_DATA_SPREAD[current])
            res = _DECODE_TABLE[word]
            if res.status == CORRECTED:
                raw[idx] = res.data
            out.append((idx, res.status, res.position))
        return out


_DATA_MASK = sum(1 << (p - 1) for p in DATA_POSITIONS)
_DATA_SPREAD = np.array([int(ENCODE_TABLE[v]) & _DATA_MASK for v in range(256)], dtype=np.uint16)


# ABFT checksums ------------------------------------------------------------------

ABFT_RTOL = 1e-9


@dataclass
class ScrubResult:
    status: str  # "ok" | "repaired" | "inconsistent"
    location: Optional[tuple[int, int]] = None
    old: Optional[float] = None
    new: Optional[float] = None
    detail: str = ""


@dataclass
class ChecksummedMatrix:
    """Row/column checksums over ``A`` and a single sum over ``b``.

    ``A`` and ``b`` are held by reference so that scrubbing repairs the
    caller's arrays in place.  Magnitudes (sums of absolute values) fix the
    scale of the relative mismatch tolerance.
    """

    A: np.ndarray
    b: np.ndarray
    cr: np.ndarray
    cc: np.ndarray
    sb: float
    row_mag: np.ndarray
    col_mag: np.ndarray
    b_mag: float
    rtol: float = ABFT_RTOL
    repairs: list = field(default_factory=list)

    def row_tol(self) -> np.ndarray:
        return self.rtol * np.maximum(self.row_mag, np.finfo(float).tiny)

    def col_tol(self) -> np.ndarray:
        return self.rtol * np.maximum(self.col_mag, np.finfo(float).tiny)


def abft_attach(A: np.ndarray, b: Optional[np.ndarray] = None, rtol: float = ABFT_RTOL) -> ChecksummedMatrix:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    if b is None:
        b = np.zeros(A.shape[0])
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite entry in checksummed data")
    return ChecksummedMatrix(
        A=A,
        b=b,
        cr=A.sum(axis=1),
        cc=A.sum(axis=0),
        sb=float(b.sum()),
        row_mag=np.abs(A).sum(axis=1),
        col_mag=np.abs(A).sum(axis=0),
        b_mag=float(np.abs(b).sum()),
        rtol=rtol,
    )


def _mismatches(sums: np.ndarray, ref: np.ndarray, tol: np.ndarray) -> np.ndarray:
    # NaN/inf sums compare false against the tolerance and so count as mismatches
    with np.errstate(invalid="ignore", over="ignore"):
        return np.flatnonzero(~(np.abs(sums - ref) <= tol))


def abft_scrub(M: ChecksummedMatrix) -> ScrubResult:
    """Verify ``A`` against its checksums and repair a single located element."""
    A = M.A
    with np.errstate(invalid="ignore", over="ignore"):
        rows = _mismatches(A.sum(axis=1), M.cr, M.row_tol())
        cols = _mismatches(A.sum(axis=0), M.cc, M.col_tol())
    if rows.size == 0 and cols.size == 0:
        return ScrubResult("ok")
    if rows.size != 1 or cols.size != 1:
        return ScrubResult("inconsistent", detail=f"row mismatches {rows.tolist()}, column mismatches {cols.tolist()}")
    return abft_repair_at(M, int(rows[0]), int(cols[0]))


def abft_repair_at(M: ChecksummedMatrix, i: int, j: int) -> ScrubResult:
    """Rebuild ``A[i, j]`` as an erasure when its location is known from another layer.

    The row checksum gives the value and the column checksum confirms it, so
    corruptions too small for the detection tolerance are still undone.
    """
    A = M.A
    row_others = np.delete(A[i, :], j)
    col_others = np.delete(A[:, j], i)
    if not (np.all(np.isfinite(row_others)) and np.all(np.isfinite(col_others))):
        return ScrubResult("inconsistent", location=(i, j), detail="non-finite value outside the located element")
    from_row = float(M.cr[i] - row_others.sum())
    from_col = float(M.cc[j] - col_others.sum())
    if not abs(from_row - from_col) <= max(M.row_tol()[i], M.col_tol()[j]):
        return ScrubResult("inconsistent", location=(i, j), detail="row and column estimates disagree")
    old = float(A[i, j])
    A[i, j] = from_row
    result = ScrubResult("repaired", location=(i, j), old=old, new=from_row)
    M.repairs.append(result)
    return result


def abft_scrub_b(M: ChecksummedMatrix, index: Optional[int] = None) -> ScrubResult:
    """Check ``b`` against its single sum.

    A single sum cannot locate an error on its own; with ``index`` supplied by
    an independent locator (such as an ECC syndrome) the element is rebuilt as
    an erasure, even when the change is below the tolerance.  Without a
    location any mismatch is reported inconsistent.
    """
    b = M.b
    tol = M.rtol * max(M.b_mag, np.finfo(float).tiny)
    with np.errstate(invalid="ignore", over="ignore"):
        total = float(b.sum())
        ok = abs(total - M.sb) <= tol
    if index is None:
        if ok:
            return ScrubResult("ok")
        return ScrubResult("inconsistent", detail="b checksum mismatch without a located index")
    others = np.delete(b, index)
    if not np.all(np.isfinite(others)):
        return ScrubResult("inconsistent", detail="non-finite value outside the located element")
    old = float(b[index])
    b[index] = M.sb - float(others.sum())
    result = ScrubResult("repaired", location=(int(index), -1), old=old, new=float(b[index]))
    M.repairs.append(result)
    return result
