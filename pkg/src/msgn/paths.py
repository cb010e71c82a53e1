"""Cadlag path records shared by the jump and PDMP simulators."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class SimulationError(RuntimeError):
    pass


class EventCapExceeded(SimulationError):
    """More accepted events than the safety cap: the network is probably exploding."""


class IntegratorFailure(SimulationError):
    pass


@dataclass
class PathRecord:
    kind: str                    # "jump" or "pdmp"
    continuous: tuple
    discrete: tuple
    reaction_ids: tuple
    is_discrete: np.ndarray      # (R,) bool
    x0: np.ndarray
    y0: np.ndarray
    T: float
    N: Optional[float]
    event_t: np.ndarray          # (E,)
    event_r: np.ndarray          # (E,) reaction index
    event_u: np.ndarray          # (E,) level coordinate of the accepted point
    event_x: np.ndarray          # (E, n) x right after the event
    event_y: np.ndarray          # (E, d)
    grid_t: np.ndarray           # (G,)
    grid_x: np.ndarray           # (G, n)
    grid_y: np.ndarray           # (G, d)
    grid_J: np.ndarray           # (G,) discrete jumps so far
    grid_comp: np.ndarray        # (G, R) integral of each (unscaled) rate along the path
    grid_counts: np.ndarray = field(default=None)  # (G, R) accepted points so far (jump paths)
    meta: dict = field(default_factory=dict)

    @property
    def n_events(self) -> int:
        return len(self.event_t)

    @property
    def events(self) -> list:
        return [
            (float(t), self.reaction_ids[r], (float(t), float(u)))
            for t, r, u in zip(self.event_t, self.event_r, self.event_u)
        ]

    def jump_counts(self) -> dict:
        c = np.bincount(self.event_r, minlength=len(self.reaction_ids))
        return dict(zip(self.reaction_ids, c.tolist()))

    def discrete_events(self):
        """(times, reaction indices) of discrete-reaction events."""
        m = self.is_discrete[self.event_r] if self.n_events else np.zeros(0, dtype=bool)
        return self.event_t[m], self.event_r[m]

    def J(self, t: float) -> int:
        te, _ = self.discrete_events()
        return int(np.searchsorted(te, t, side="right"))

    def y_at(self, t) -> np.ndarray:
        """Discrete component at time(s) t (right-continuous)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if not self.n_events:
            return np.broadcast_to(self.y0, (len(t), len(self.y0))).copy()
        k = np.searchsorted(self.event_t, t, side="right") - 1
        return np.where(k[:, None] >= 0, self.event_y[np.maximum(k, 0)], self.y0)

    def x_at(self, t) -> np.ndarray:
        """Continuous component at time(s) t.

        Jump paths are piecewise constant.  PDMP paths are interpolated by
        cubic Hermite segments between grid and event nodes, with slopes
        supplied by ``self.meta['drift']`` (set by the PDMP simulator).
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.kind == "jump":
            k = np.searchsorted(self.event_t, t, side="right") - 1
            if not self.n_events:
                return np.broadcast_to(self.x0, (len(t), len(self.x0))).copy()
            return np.where(k[:, None] >= 0, self.event_x[np.maximum(k, 0)], self.x0)
        return self._hermite(t)

    def _nodes(self):
        cache = self.meta.get("_nodes")
        if cache is None:
            nt = np.concatenate([self.grid_t, self.event_t])
            nx = np.concatenate([self.grid_x, self.event_x]) if self.n_events else self.grid_x
            order = np.argsort(nt, kind="stable")
            nt, nx = nt[order], nx[order]
            keep = np.concatenate([[True], np.diff(nt) > 0])
            cache = (nt[keep], nx[keep])
            self.meta["_nodes"] = cache
        return cache

    def _hermite(self, t):
        nt, nx = self._nodes()
        drift = self.meta["drift"]
        k = np.clip(np.searchsorted(nt, t, side="right") - 1, 0, len(nt) - 2)
        a, b = nt[k], nt[k + 1]
        xa, xb = nx[k], nx[k + 1]
        # y is constant on each node interval: use y just after the left node
        yk = self.y_at(0.5 * (a + b))
        fa = drift(xa, yk)
        fb = drift(xb, yk)
        hgt = (b - a)[:, None]
        s = ((t - a) / (b - a))[:, None]
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return h00 * xa + h10 * hgt * fa + h01 * xb + h11 * hgt * fb

    # -- csv ---------------------------------------------------------------

    def write_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", *self.continuous, *self.discrete, "J_t"])
            for g in range(len(self.grid_t)):
                w.writerow(
                    [repr(float(self.grid_t[g]))]
                    + [repr(float(v)) for v in self.grid_x[g]]
                    + [str(int(v)) for v in self.grid_y[g]]
                    + [str(int(self.grid_J[g]))]
                )

    def write_events_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s", "reaction", "u"])
            for t, r, u in zip(self.event_t, self.event_r, self.event_u):
                w.writerow([repr(float(t)), self.reaction_ids[r], repr(float(u))])


def read_path_csv(path):
    """Inverse of ``PathRecord.write_csv`` for the grid part: (header, columns dict)."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    header, body = rows[0], rows[1:]
    cols = {h: np.array([float(r[i]) for r in body]) for i, h in enumerate(header)}
    return header, cols


def uniform_grid(T: float, resolution: Optional[int] = None, step: Optional[float] = None) -> np.ndarray:
    """Uniform grid on [0, T]; default step is T / 2**8."""
    if step is not None:
        m = max(1, int(round(T / step)))
    else:
        m = 2**8 if resolution is None else int(resolution)
    return np.linspace(0.0, T, m + 1)
