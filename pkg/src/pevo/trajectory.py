"""Time-stamped sequences of fields: interpolation in t, D_t, norms and binary dumps."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .grid import Field, Grid, GridMismatch, sobolev_norm
from .symbols import fd_weights

MAGIC = b"PEVO"
FORMAT_VERSION = 1


@dataclass
class Trajectory:
    """Frames ``u(t_n, x_j)`` stored as a (n_times, N) complex array."""

    times: np.ndarray
    frames: np.ndarray
    grid: Grid
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.frames = np.asarray(self.frames, dtype=complex).reshape(len(self.times), -1)
        if self.frames.shape[1] != self.grid.N:
            raise GridMismatch("frame length does not match the grid")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("trajectory frames contain non-finite values")

    @classmethod
    def constant(cls, u, grid: Grid | None = None, times=(0.0,)):
        vals = u.values if isinstance(u, Field) else np.asarray(u)
        grid = u.grid if isinstance(u, Field) else grid
        return cls(np.asarray(times, float), np.tile(vals, (len(times), 1)), grid)

    @classmethod
    def zeros_like(cls, other: "Trajectory"):
        return cls(other.times.copy(), np.zeros_like(other.frames), other.grid)

    def __len__(self):
        return len(self.times)

    def frame(self, n: int) -> Field:
        return Field(self.frames[n], self.grid)

    @property
    def final(self) -> Field:
        return self.frame(-1)

    def _same_times(self, other):
        if len(other.times) != len(self.times) or np.any(other.times != self.times):
            raise ValueError("trajectories live on different time grids")
        self.grid.check(other.grid)

    def __add__(self, other):
        self._same_times(other)
        return Trajectory(self.times, self.frames + other.frames, self.grid)

    def __sub__(self, other):
        self._same_times(other)
        return Trajectory(self.times, self.frames - other.frames, self.grid)

    def __mul__(self, c):
        return Trajectory(self.times, self.frames * c, self.grid)

    __rmul__ = __mul__

    # -- interpolation -------------------------------------------------------
    def at(self, t: float) -> np.ndarray:
        """Samples at time t: cubic Lagrange interpolation between frames.

        One frame means a time-independent state; two or three frames fall
        back to the highest available order.
        """
        n = len(self.times)
        if n == 1:
            return self.frames[0]
        tt = self.times
        i = int(np.clip(np.searchsorted(tt, t) - 1, 0, n - 2))
        if t == tt[i]:
            return self.frames[i]
        if t == tt[i + 1]:
            return self.frames[i + 1]
        lo = max(0, min(i - 1, n - 4))
        idx = np.arange(lo, min(n, lo + 4))
        w = np.ones(len(idx))
        for a, ia in enumerate(idx):
            for ib in idx:
                if ib != ia:
                    w[a] *= (t - tt[ib]) / (tt[ia] - tt[ib])
        return w @ self.frames[idx]

    # -- time derivatives ----------------------------------------------------
    def time_derivative(self) -> np.ndarray:
        """``d/dt`` of the frames: 4th-order centered inside, one-sided at the ends.

        Requires (nearly) uniform times and at least 5 frames.
        """
        n = len(self.times)
        if n < 5:
            raise ValueError("at least 5 frames are needed for the 4th-order t-derivative")
        dt = np.diff(self.times)
        if np.ptp(dt) > 1e-9 * np.max(dt):
            raise ValueError("time derivative needs a uniform time grid")
        step = dt.mean()
        out = np.empty_like(self.frames)
        for k in range(n):
            lo = min(max(k - 2, 0), n - 5)
            offs = np.arange(lo, lo + 5) - k
            w = fd_weights(1, offs) / step
            out[k] = w @ self.frames[lo:lo + 5]
        return out

    def D_t(self) -> np.ndarray:
        """``D_t = -i d/dt`` of the frames."""
        return -1j * self.time_derivative()

    # -- norms ---------------------------------------------------------------
    def norms(self, s: float = 0.0, h: float = 1.0) -> np.ndarray:
        return np.atleast_1d(sobolev_norm(self.frames, s, h, grid=self.grid))

    def sup_norm(self, s: float = 0.0) -> float:
        return float(np.max(self.norms(s)))

    def graded_seminorm(self, n: float = 0.0) -> float:
        """``sup_t (||g(t)||_n + ||D_t g(t)||_n)``."""
        a = self.norms(n)
        b = np.atleast_1d(sobolev_norm(self.D_t(), n, grid=self.grid))
        return float(np.max(a + b))

    # -- binary dump ---------------------------------------------------------
    def write_frames(self, path):
        """Little-endian dump: magic, version, N, count, then (t, re/im pairs) per frame."""
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<III", FORMAT_VERSION, self.grid.N, len(self.times)))
            for tt, fr in zip(self.times, self.frames):
                fh.write(struct.pack("<d", tt))
                inter = np.empty(2 * self.grid.N, dtype="<f8")
                inter[0::2] = fr.real
                inter[1::2] = fr.imag
                fh.write(inter.tobytes())


def read_frames(path, L: float):
    """Inverse of :meth:`Trajectory.write_frames` (L is not stored in the file)."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError("not a frame dump")
        version, N, count = struct.unpack("<III", fh.read(12))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported frame dump version {version}")
        times = np.empty(count)
        frames = np.empty((count, N), dtype=complex)
        for k in range(count):
            times[k] = struct.unpack("<d", fh.read(8))[0]
            inter = np.frombuffer(fh.read(16 * N), dtype="<f8")
            frames[k] = inter[0::2] + 1j * inter[1::2]
    return Trajectory(times, frames, Grid(N, L))
