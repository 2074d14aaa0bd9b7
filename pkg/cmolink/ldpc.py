# -*- coding: utf-8 -*-
"""
Systematic LDPC codes with accumulate (staircase) parity and a vectorized
normalized min-sum decoder.

The parity-check matrix is ``H = [Hu | Hp]``. ``Hp`` is dual-diagonal, so
parity bits follow from a running XOR of the syndrome of the information
part and ``H`` always has full row rank. ``Hu`` has a fixed column weight
and is grown column by column avoiding length-4 cycles.

LLR sign convention: positive values favour bit ``0``.
"""

import functools
import logging
from typing import List, Union

import numpy as np
import scipy.sparse as sp

from .errors import CodingError, ConfigError
from .utils import derive_rng

__all__ = ["LdpcCode", "get_code", "read_alist", "write_alist", "LLR_CLIP"]

log = logging.getLogger(__name__)

LLR_CLIP = 30.0


class LdpcCode:
    """ A binary LDPC code in systematic form (information bits first).

        :param h: Sparse or dense ``(m, n)`` binary parity-check matrix whose
            last ``m`` columns form the dual-diagonal parity part.
    """

    def __init__(self, h):
        h = sp.csr_matrix(h, dtype=np.uint8)
        h.data[:] = 1
        self.h = h
        self.m, self.n = h.shape
        self.k = self.n - self.m
        if self.k <= 0:
            raise ConfigError(f"Parity matrix {h.shape} has no information bits")
        hp = h[:, self.k:].toarray()
        staircase = np.eye(self.m, dtype=np.uint8) + np.eye(self.m, k=-1, dtype=np.uint8)
        if not np.array_equal(hp, staircase):
            raise ConfigError("Parity part of H must be dual-diagonal for accumulate encoding")
        self.hu = h[:, :self.k].tocsr()

        coo = h.tocoo()
        order = np.lexsort((coo.col, coo.row))
        self._edge_row = coo.row[order].astype(np.intp)
        self._edge_col = coo.col[order].astype(np.intp)
        self._row_start = np.flatnonzero(np.r_[True, np.diff(self._edge_row) != 0])
        n_edges = len(self._edge_col)
        # edge -> variable incidence, used to sum check messages per bit
        self._gather = sp.csr_matrix((np.ones(n_edges), (np.arange(n_edges), self._edge_col)),
                                     shape=(n_edges, self.n))

    def __repr__(self):
        return f"LdpcCode(n={self.n}, k={self.k}, rate={self.rate:.4f})"

    @property
    def rate(self) -> float:
        return self.k / self.n

    ###### Construction

    @classmethod
    def ira(cls, n: int, rate: float, col_weight=3, seed=0) -> "LdpcCode":
        """ Construct an accumulate-parity code of length ``n``.

            :param n: Codeword length.
            :param rate: Code rate; ``rate * n`` must be an integer.
            :param col_weight: Ones per information column.
            :param seed: Construction seed.
        """
        k = rate * n
        if n < 4 or abs(k - round(k)) > 1e-9 or not 0 < rate < 1:
            raise ConfigError(f"Code length {n} with rate {rate} gives a non-integer information length")
        k = int(round(k))
        m = n - k
        if col_weight > m:
            raise ConfigError(f"Column weight {col_weight} exceeds {m} parity checks")
        rng = derive_rng(seed)

        used_pairs = {(i - 1, i) for i in range(1, m)}
        degree = np.zeros(m, dtype=np.int64)
        rows: List[int] = []
        cols: List[int] = []
        for col in range(k):
            order = np.lexsort((rng.random(m), degree))
            chosen: List[int] = []
            for r in order:
                r = int(r)
                if all((min(r, c), max(r, c)) not in used_pairs for c in chosen):
                    chosen.append(r)
                    if len(chosen) == col_weight:
                        break
            if len(chosen) < col_weight:
                # no cycle-free choice left, fall back to the least used rows
                chosen = [int(r) for r in order[:col_weight]]
            for a in chosen:
                for b in chosen:
                    if a < b:
                        used_pairs.add((a, b))
            degree[chosen] += 1
            rows.extend(chosen)
            cols.extend([col] * col_weight)
        hu = sp.csr_matrix((np.ones(len(rows), dtype=np.uint8), (rows, cols)), shape=(m, k))
        hp = sp.eye(m, dtype=np.uint8, format="csr") + sp.eye(m, k=-1, dtype=np.uint8, format="csr")
        log.debug("Constructed LDPC code n=%d k=%d (column weight %d)", n, k, col_weight)
        return cls(sp.hstack([hu, hp], format="csr"))

    ###### Encoding

    def encode(self, info) -> np.ndarray:
        """ Systematic encoding. Accepts ``(k,)`` or a batch ``(..., k)``. """
        info = np.asarray(info)
        if info.shape[-1:] != (self.k,):
            raise CodingError(f"Information length {info.shape[-1:] or 0} does not match k={self.k}")
        u = info.reshape(-1, self.k).astype(np.uint8) & 1
        syndrome = (self.hu @ u.T.astype(np.int64)).T % 2
        parity = np.bitwise_xor.accumulate(syndrome.astype(np.uint8), axis=-1)
        return np.concatenate([u, parity], axis=-1).reshape(info.shape[:-1] + (self.n,))

    def syndrome(self, codeword) -> np.ndarray:
        c = np.asarray(codeword).reshape(-1, self.n).astype(np.int64)
        return ((self.h @ c.T).T % 2).astype(np.uint8).reshape(np.shape(codeword)[:-1] + (self.m,))

    def is_codeword(self, codeword) -> np.ndarray:
        return ~np.any(self.syndrome(codeword), axis=-1)

    ###### Decoding

    def decode(self, llr, max_iter=25, alpha=0.8, return_iterations=False):
        """ Normalized min-sum decoding with a flooding schedule.

            :param llr: Channel LLRs ``(n,)`` or ``(batch, n)``, positive
                favouring ``0``; clipped to ``+-LLR_CLIP``.
            :param max_iter: Iteration cap.
            :param alpha: Check-node normalization factor.
            :returns: ``(info_bits, converged)``, plus the per-word iteration
                count when ``return_iterations`` is set. A word converges when
                all parity checks hold and no bit is an erasure (zero
                posterior LLR).
        """
        llr = np.asarray(llr, dtype=np.float64)
        single = llr.ndim == 1
        if llr.shape[-1:] != (self.n,):
            raise CodingError(f"LLR length {llr.shape[-1:] or 0} does not match n={self.n}")
        llr = np.clip(llr.reshape(-1, self.n), -LLR_CLIP, LLR_CLIP)
        batch = llr.shape[0]

        ec, starts = self._edge_col, self._row_start
        counts = np.diff(np.r_[starts, len(ec)])
        q = llr[:, ec]
        hard = np.zeros((batch, self.n), dtype=np.uint8)
        converged = np.zeros(batch, dtype=bool)
        iterations = np.full(batch, max_iter, dtype=np.int64)
        active = np.arange(batch)

        for it in range(1, max_iter + 1):
            qa = q[active]
            mag = np.abs(qa)
            min1 = np.minimum.reduceat(mag, starts, axis=1)
            min1_e = np.repeat(min1, counts, axis=1)
            is_min = mag == min1_e
            n_min = np.repeat(np.add.reduceat(is_min.astype(np.int64), starts, axis=1), counts, axis=1)
            min2 = np.minimum.reduceat(np.where(is_min, np.inf, mag), starts, axis=1)
            min2_e = np.repeat(min2, counts, axis=1)
            extrinsic = np.where(is_min & (n_min == 1), min2_e, min1_e)
            negative = qa < 0
            parity = np.repeat(np.add.reduceat(negative.astype(np.int64), starts, axis=1) % 2, counts, axis=1)
            sign = np.where((parity + negative) % 2 == 1, -1.0, 1.0)
            r = alpha * sign * np.where(np.isfinite(extrinsic), extrinsic, 0.0)

            total = llr[active] + (self._gather.T @ r.T).T
            q[active] = np.clip(total[:, ec] - r, -LLR_CLIP, LLR_CLIP)
            decided = (total < 0).astype(np.uint8)
            ok = ~np.any(self.syndrome(decided), axis=-1) & ~np.any(total == 0, axis=-1)

            hard[active] = decided
            done = active[ok]
            converged[done] = True
            iterations[done] = it
            active = active[~ok]
            if not len(active):
                break

        log.debug("LDPC decode: %d/%d words converged", int(converged.sum()), batch)
        info = hard[:, :self.k]
        if single:
            info, converged, iterations = info[0], bool(converged[0]), int(iterations[0])
        if return_iterations:
            return info, converged, iterations
        return info, converged


@functools.lru_cache(maxsize=32)
def get_code(n: int, rate: float, seed=0) -> LdpcCode:
    """ Cached :meth:`LdpcCode.ira` construction. """
    return LdpcCode.ira(int(n), float(rate), seed=seed)


##############################################################################
################################ alist format ################################
##############################################################################


def write_alist(code: Union[LdpcCode, sp.spmatrix], path):
    """ Store a parity-check matrix in the alist text format. """
    h = code.h if isinstance(code, LdpcCode) else sp.csr_matrix(code)
    m, n = h.shape
    csc = h.tocsc()
    col_rows = [sorted(csc.indices[csc.indptr[j]:csc.indptr[j + 1]]) for j in range(n)]
    row_cols = [sorted(h.indices[h.indptr[i]:h.indptr[i + 1]]) for i in range(m)]
    max_c = max(len(c) for c in col_rows)
    max_r = max(len(r) for r in row_cols)
    lines = [f"{n} {m}", f"{max_c} {max_r}",
             " ".join(str(len(c)) for c in col_rows),
             " ".join(str(len(r)) for r in row_cols)]
    for entries, width in ((col_rows, max_c), (row_cols, max_r)):
        for e in entries:
            padded = [i + 1 for i in e] + [0] * (width - len(e))
            lines.append(" ".join(str(v) for v in padded))
    with open(path, "w", encoding="ascii") as fp:
        fp.write("\n".join(lines) + "\n")


def read_alist(path) -> sp.csr_matrix:
    """ Read a parity-check matrix from an alist file. """
    try:
        with open(path, "r", encoding="ascii") as fp:
            tokens = [int(t) for t in fp.read().split()]
    except (OSError, ValueError) as e:
        raise ConfigError(f"Cannot read alist file {path}: {e}") from e
    try:
        n, m, max_c, _max_r = tokens[:4]
        col_deg = tokens[4:4 + n]
        pos = 4 + n + m
        rows, cols = [], []
        for j in range(n):
            entries = tokens[pos:pos + max_c]
            pos += max_c
            for i in entries[:col_deg[j]]:
                rows.append(i - 1)
                cols.append(j)
    except (IndexError, ValueError) as e:
        raise ConfigError(f"Truncated alist file {path}") from e
    return sp.csr_matrix((np.ones(len(rows), dtype=np.uint8), (rows, cols)), shape=(m, n))
