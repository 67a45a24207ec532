"""Binary syndrome-trellis codes.

The parity-check matrix ``H`` (m x n) is a band: block ``b`` occupies the
columns assigned to message bit ``b`` and rows ``b .. b+h-1`` (clipped at
``m``). Embedding runs the Viterbi algorithm over the ``2**h`` partial
syndrome states, which gives the exact minimum-cost word with ``H y = msg``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError

WET = float("inf")


def default_hhat(h: int) -> tuple:
    """``1,1,0`` repeated over ``h`` bits with the last bit forced to 1."""
    bits = [(1, 1, 0)[i % 3] for i in range(h)]
    bits[-1] = 1
    return tuple(bits)


@dataclass(frozen=True)
class StcParams:
    h: int = 7
    hhat: tuple = None
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.h <= 12:
            raise ValueError(f"constraint height must be in [2, 12], got {self.h}")
        hhat = default_hhat(self.h) if self.hhat is None else tuple(int(b) for b in self.hhat)
        if len(hhat) != self.h or any(b not in (0, 1) for b in hhat):
            raise ValueError("hhat must hold exactly h bits")
        if hhat[0] != 1 or hhat[-1] != 1:
            raise ValueError("hhat must start and end with a 1")
        object.__setattr__(self, "hhat", hhat)

    def to_dict(self) -> dict:
        return {"h": self.h, "hhat": list(self.hhat), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "StcParams":
        return cls(int(d["h"]), tuple(d["hhat"]), int(d["seed"]))


def _bits_to_int(bits) -> int:
    # bit i of the integer is row offset i inside the band
    return sum(int(b) << i for i, b in enumerate(bits))


@dataclass(frozen=True)
class ParityMatrix:
    """Compact description of H: per-column band offset and bit pattern."""

    n: int
    m: int
    h: int
    col_block: np.ndarray
    col_pattern: np.ndarray

    def column(self, j: int) -> np.ndarray:
        """Dense column ``j`` of H."""
        out = np.zeros(self.m, np.uint8)
        b, pat = int(self.col_block[j]), int(self.col_pattern[j])
        for i in range(self.h):
            if (pat >> i) & 1 and b + i < self.m:
                out[b + i] = 1
        return out

    def dense(self) -> np.ndarray:
        return np.stack([self.column(j) for j in range(self.n)], axis=1) if self.n else np.zeros((self.m, 0), np.uint8)

    def syndrome(self, word) -> np.ndarray:
        word = np.asarray(word, dtype=np.uint8).ravel()
        if len(word) != self.n:
            raise ValueError(f"word length {len(word)} does not match n={self.n}")
        acc = 0
        for j in np.flatnonzero(word):
            acc ^= int(self.col_pattern[j]) << int(self.col_block[j])
        return np.array([(acc >> i) & 1 for i in range(self.m)], np.uint8)


def build_parity(n: int, m: int, params: StcParams) -> ParityMatrix:
    """Band parity-check matrix for ``n`` cover bits and ``m`` message bits.

    Block widths are ``n // m``, with one extra column for each of the first
    ``n % m`` blocks. Every block starts with ``hhat``; the remaining block
    columns are drawn from ``params.seed`` with top and bottom bits set.
    """
    if m <= 0:
        raise ValueError("message length must be positive")
    if m > n:
        raise ValueError(f"message length {m} exceeds cover length {n}")
    h = params.h
    w, extra = divmod(n, m)
    width_max = w + (1 if extra else 0)
    rng = np.random.default_rng(params.seed)
    patterns = [_bits_to_int(params.hhat)]
    for _ in range(width_max - 1):
        mid = int(rng.integers(0, 1 << max(h - 2, 0))) if h > 2 else 0
        patterns.append(1 | (mid << 1) | (1 << (h - 1)))
    col_block = np.empty(n, np.int64)
    col_pattern = np.empty(n, np.int64)
    j = 0
    for b in range(m):
        width = w + (1 if b < extra else 0)
        col_block[j : j + width] = b
        col_pattern[j : j + width] = patterns[:width]
        j += width
    return ParityMatrix(n, m, h, col_block, col_pattern)


def _clamped_costs(costs: np.ndarray) -> np.ndarray:
    costs = np.asarray(costs, dtype=np.float64)
    if np.any(np.isnan(costs)) or np.any(costs < 0):
        raise ValueError("costs must be non-negative")
    finite = np.isfinite(costs)
    big = float(costs[finite].sum()) * 2.0 + 1.0
    return np.where(finite, costs, big)


def stc_embed(cover, costs, message, params: StcParams = StcParams()):
    """Minimum-cost stego word with syndrome ``message``.

    Returns ``(stego, total_cost)``. Positions with infinite cost (wet) are
    never flipped; if the syndrome cannot be met without one,
    :class:`InfeasibleError` is raised.
    """
    cover = np.asarray(cover, dtype=np.uint8).ravel()
    message = np.asarray(message, dtype=np.uint8).ravel()
    raw_costs = np.asarray(costs, dtype=np.float64).ravel()
    n, m = len(cover), len(message)
    if len(raw_costs) != n:
        raise ValueError("costs and cover differ in length")
    if m == 0:
        return cover.copy(), 0.0
    H = build_parity(n, m, params)
    rho = _clamped_costs(raw_costs)
    h = params.h
    n_states = 1 << h
    states = np.arange(n_states)
    full = n_states - 1
    cost = np.full(n_states, np.inf)
    cost[0] = 0.0
    flips = np.zeros((n, n_states), dtype=bool)
    j = 0
    for b in range(m):
        rows_left = m - b
        mask = full if rows_left >= h else (1 << rows_left) - 1
        while j < n and H.col_block[j] == b:
            col = int(H.col_pattern[j]) & mask
            c = float(rho[j])
            # y = cover keeps the bit for free; the other value costs c
            if cover[j]:
                via_keep = cost[states ^ col]
                via_flip = cost + c
            else:
                via_keep = cost
                via_flip = cost[states ^ col] + c
            flip = via_flip < via_keep
            cost = np.where(flip, via_flip, via_keep)
            flips[j] = flip
            j += 1
        # row b is complete: keep states whose low bit matches, then shift
        keep = cost[message[b] :: 2]
        cost = np.full(n_states, np.inf)
        cost[: n_states // 2] = keep

    total = float(cost[0])
    stego = cover.copy()
    state = 0
    j = n - 1
    for b in range(m - 1, -1, -1):
        state = ((state << 1) | int(message[b])) & full
        rows_left = m - b
        mask = full if rows_left >= h else (1 << rows_left) - 1
        while j >= 0 and H.col_block[j] == b:
            y = int(cover[j]) ^ int(flips[j, state])
            stego[j] = y
            if y:
                state ^= int(H.col_pattern[j]) & mask
            j -= 1
    flipped = stego != cover
    if np.any(flipped & ~np.isfinite(raw_costs)):
        raise InfeasibleError("syndrome cannot be met without changing a wet position")
    return stego, float(raw_costs[flipped].sum())


def stc_extract(stego, m: int, params: StcParams = StcParams()) -> np.ndarray:
    """Message bits ``H @ stego`` over GF(2)."""
    stego = np.asarray(stego, dtype=np.uint8).ravel()
    if m == 0:
        return np.zeros(0, np.uint8)
    if len(stego) < m:
        raise ValueError(f"stego length {len(stego)} shorter than message length {m}")
    return build_parity(len(stego), m, params).syndrome(stego)
