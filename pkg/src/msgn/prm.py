"""Reproducible Poisson random measures on [0, inf) x [0, inf) with intensity ds du.

The quadrant is cut into cells: unit-width time windows ``(j w, (j+1) w]``
crossed with a geometric ladder of level strips ``[0, L0]``,
``(L0, 2 L0]``, ``(2 L0, 4 L0]``, ...  Each cell draws its points from a
Philox generator keyed by a hash of ``(seed, replica, reaction id, strip,
window)``: a Poisson(area) count, then i.i.d. uniform positions.  A cell is
therefore a pure function of its key, so the realised point set of any
rectangle does not depend on which rectangles were asked for before, or in
what order.  Raising a thinning level only adds strips; it never moves
points already seen.
"""
from __future__ import annotations

import hashlib
import math
import threading
from typing import Optional

import numpy as np

_MASK64 = (1 << 64) - 1


def _cell_key(seed: int, replica: int, rid: str, k: int, j: int) -> int:
    msg = f"{seed & _MASK64}|{replica}|{rid}|{k}|{j}".encode()
    return int.from_bytes(hashlib.blake2b(msg, digest_size=16).digest(), "little")


class PRMStream:
    """One realisation of a Poisson random measure, materialised cell by cell."""

    def __init__(self, seed: int, replica: int, reaction_id: str, base_level: float = 1.0, window: float = 1.0):
        if not base_level > 0 or not window > 0:
            raise ValueError("base level and window width must be positive")
        self.seed = int(seed)
        self.replica = int(replica)
        self.reaction_id = str(reaction_id)
        self.base_level = float(base_level)
        self.window = float(window)
        self._cells: dict = {}
        self._lock = threading.Lock()
        # one bit generator, re-keyed per cell: cheaper than constructing a fresh one
        self._bitgen = np.random.Philox(key=0)
        self._rng = np.random.Generator(self._bitgen)

    def __repr__(self):
        return f"PRMStream(seed={self.seed}, replica={self.replica}, reaction_id={self.reaction_id!r})"

    # strips ------------------------------------------------------------

    def strip_bounds(self, k: int):
        if k == 0:
            return 0.0, self.base_level
        return self.base_level * 2.0 ** (k - 1), self.base_level * 2.0**k

    def strip_top(self, k: int) -> float:
        return 0.0 if k < 0 else self.base_level * 2.0**k

    def strip_for(self, level: float) -> int:
        """Smallest strip index whose top reaches ``level`` (-1 when level <= 0)."""
        if not level > 0:
            return -1
        if math.isinf(level):
            raise ValueError("level must be finite")
        k = max(0, math.ceil(math.log2(level / self.base_level)))
        while self.strip_top(k) < level:
            k += 1
        while k > 0 and self.strip_top(k - 1) >= level:
            k -= 1
        return k

    # cells -------------------------------------------------------------

    def cell(self, k: int, j: int):
        """Points of cell (strip k, window j) as (s, u) arrays sorted by s."""
        key = (k, j)
        pts = self._cells.get(key)
        if pts is not None:
            return pts
        lo, hi = self.strip_bounds(k)
        w = self.window
        with self._lock:
            pts = self._cells.get(key)
            if pts is not None:
                return pts
            rng = self._keyed(_cell_key(self.seed, self.replica, self.reaction_id, k, j))
            count = rng.poisson(w * (hi - lo))
            s = j * w + w * rng.random(count)
            u = lo + (hi - lo) * rng.random(count)
            order = np.argsort(s, kind="stable")
            pts = (s[order], u[order])
            for a in pts:
                a.flags.writeable = False
            self._cells[key] = pts
        return pts

    def _keyed(self, key: int) -> np.random.Generator:
        """The shared generator reset to Philox(key=key, counter=0)."""
        st = self._bitgen.state
        st["state"]["key"][:] = (key & _MASK64, (key >> 64) & _MASK64)
        st["state"]["counter"][:] = 0
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        st["uinteger"] = 0
        self._bitgen.state = st
        return self._rng

    def window_points(self, j: int, level: float):
        """All points of window j in strips 0..strip_for(level), unfiltered in u."""
        K = self.strip_for(level)
        if K < 0:
            return np.empty(0), np.empty(0)
        parts = [self.cell(k, j) for k in range(K + 1)]
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    def clear(self):
        with self._lock:
            self._cells.clear()


def stream(seed: int, replica: int, reaction_id: str, base_level: float = 1.0, window: float = 1.0) -> PRMStream:
    return PRMStream(seed, replica, reaction_id, base_level, window)


def query(st: PRMStream, t0: float, t1: float, level: float) -> np.ndarray:
    """Points (s, u) with t0 < s <= t1 and 0 <= u <= level, as an (m, 2) array sorted by s."""
    if not t1 > t0 or not level > 0:
        return np.empty((0, 2))
    w = st.window
    j0 = max(0, math.floor(t0 / w))
    j1 = math.ceil(t1 / w) - 1
    ss, uu = [], []
    for j in range(j0, j1 + 1):
        s, u = st.window_points(j, level)
        m = (s > t0) & (s <= t1) & (u <= level)
        ss.append(s[m])
        uu.append(u[m])
    if not ss:
        return np.empty((0, 2))
    s = np.concatenate(ss)
    u = np.concatenate(uu)
    order = np.argsort(s, kind="stable")
    return np.column_stack([s[order], u[order]])


def next_point(st: PRMStream, t: float, level: float, horizon: float = math.inf) -> Optional[tuple]:
    """First point (s, u) with t < s <= horizon and u <= level, or None."""
    if not level > 0:
        return None
    w = st.window
    j = max(0, math.floor(t / w))
    while j * w < horizon:
        s, u = st.window_points(j, level)
        m = (s > t) & (s <= horizon) & (u <= level)
        if m.any():
            i = int(np.argmin(np.where(m, s, np.inf)))
            return float(s[i]), float(u[i])
        j += 1
    return None
