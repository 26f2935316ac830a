"""First exit of an Euler-Maruyama path from a bounded domain.

Each sample ``k`` is driven by the counter-based stream ``(seed, k)``.
The batch is split into contiguous chunks that run on a thread pool
(the kernel releases the GIL); since a sample depends on nothing but its
own stream, any number of workers gives bit-identical output.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Iterator

import numpy as np
from numba import njit, uint64

from . import domain as dm
from .domain import DomainSpec, GeometryError
from .rng import (BUF_WORDS, TAG_PATH_NORMAL, TAG_PATH_UNIFORM, RngStream, as_u64,
                  fill_normals_from, next_uniform, reset_state)
from .sde import NumericalError, SdeSpec, StepConfig, euler_step

SPATIAL, TIME_ZERO, TRUNCATED, NONFINITE, GEOMETRY = 0, 1, 2, 3, 4
NORMAL_CHUNK = 512


class ExitVia(str, Enum):
    SPATIAL_BOUNDARY = "spatial_boundary"
    TIME_ZERO_CONVENTION = "time_zero_convention"


class TruncationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExitSample:
    tau: float
    x_exit: np.ndarray
    n_steps: int
    exited_via: ExitVia
    truncated: bool


_KERNELS: dict = {}


def _make_kernel(dim, drift, diffusion, inside_fn):
    """Exit-time kernel specialised to the dimension and coefficient functions.

    Freezing ``dim`` lets the compiler unroll the coordinate loops, which
    is worth a factor of several in steps per second.
    """
    key = (dim, drift, diffusion, inside_fn)
    if key in _KERNELS:
        return _KERNELS[key]

    @njit(nogil=True)
    def _exit_kernel(kind, lo, hi, c, r, tol, x0, h, max_steps,
                     bridge, seed, start, stop, tau, xexit, nsteps, flag):
        d = dim
        sqh = math.sqrt(h)
        nst = np.zeros(2, dtype=np.int64)
        nbuf = np.zeros(BUF_WORDS, dtype=np.uint64)
        ust = np.zeros(2, dtype=np.int64)
        ubuf = np.zeros(4, dtype=np.uint64)
        x = np.empty(d)
        y = np.empty(d)
        b = np.empty(d)
        s = np.empty(d * d)
        v = np.empty(d)
        hit = np.empty(d)
        nrm = np.empty(NORMAL_CHUNK)
        for k in range(start, stop):
            stream = uint64(k)
            reset_state(nst, nbuf)
            reset_state(ust, ubuf)
            for i in range(d):
                x[i] = x0[i]
            n = 0
            state = TRUNCATED
            t_exit = 0.0
            q = 0
            fill = 0
            # exit test at the bottom: a loop-header condition here makes
            # the compiled loop several times slower
            while True:
                n += 1
                drift(x, b)
                diffusion(x, s)
                if q + d > fill:
                    # normals come in growing chunks from a separate tight loop,
                    # which compiles far better than drawing them in place
                    fill = min(2 * fill, NORMAL_CHUNK) if fill else 16
                    fill = max(fill - fill % d, d)
                    fill_normals_from(seed, stream, TAG_PATH_NORMAL, nst, nbuf, nrm[:fill])
                    q = 0
                for j in range(d):
                    v[j] = sqh * nrm[q]
                    q += 1
                finite = True
                for i in range(d):
                    acc = 0.0
                    for j in range(d):
                        acc += s[i * d + j] * v[j]
                    y[i] = x[i] + b[i] * h + acc
                    if not math.isfinite(y[i]):
                        finite = False
                if not finite:
                    state = NONFINITE
                    break
                if kind == 0:
                    inside = dm.inside_box(lo, hi, tol, y)
                elif kind == 1:
                    inside = dm.inside_ball(c, r, tol, y)
                else:
                    inside = True
                    for i in range(d):
                        if not (lo[i] < y[i] < hi[i]):
                            inside = False
                    if inside:
                        inside = inside_fn(y)
                if not inside:
                    if kind == 0:
                        lam = dm.crossing_box(lo, hi, x, y, hit)
                    elif kind == 1:
                        lam = dm.crossing_ball(c, r, x, y, hit)
                    else:
                        lam = dm.crossing_generic(inside_fn, tol, x, y, hit)
                        if lam < 0.0:
                            state = GEOMETRY
                            break
                    t_exit = (n - 1 + lam) * h
                    state = SPATIAL
                    break
                if bridge and kind != 2:
                    if kind == 0:
                        p = dm.bridge_box(lo, hi, x, y, s, h)
                    else:
                        p = dm.bridge_ball(c, r, x, y, s, h)
                    if p > 0.0:
                        if next_uniform(seed, stream, TAG_PATH_UNIFORM, ust, ubuf) < p:
                            if kind == 0:
                                dm.bridge_box_exit(lo, hi, x, y, s, h, hit)
                            else:
                                dm.bridge_ball_exit(c, r, x, y, hit)
                            t_exit = (n - 0.5) * h
                            state = SPATIAL
                            break
                for i in range(d):
                    x[i] = y[i]
                if n >= max_steps:
                    break
            m = k - start
            nsteps[m] = n
            flag[m] = state
            if state == SPATIAL:
                tau[m] = t_exit
                for i in range(d):
                    xexit[m, i] = hit[i]
            else:
                tau[m] = n * h
                for i in range(d):
                    xexit[m, i] = x[i]

    _KERNELS[key] = _exit_kernel
    return _exit_kernel


class ExitBatch:
    """Struct-of-arrays view of many exit samples; indexes like a list of ExitSample."""

    def __init__(self, tau, x_exit, n_steps, flags):
        self.tau = tau
        self.x_exit = x_exit
        self.n_steps = n_steps
        self.flags = flags

    def __len__(self):
        return self.tau.shape[0]

    def __getitem__(self, k) -> ExitSample:
        via = ExitVia.TIME_ZERO_CONVENTION if self.flags[k] == TIME_ZERO else ExitVia.SPATIAL_BOUNDARY
        return ExitSample(float(self.tau[k]), self.x_exit[k].copy(), int(self.n_steps[k]), via,
                          bool(self.flags[k] == TRUNCATED))

    def __iter__(self) -> Iterator[ExitSample]:
        return (self[k] for k in range(len(self)))

    @property
    def truncated(self) -> np.ndarray:
        return self.flags == TRUNCATED

    @property
    def truncated_count(self) -> int:
        return int(np.count_nonzero(self.truncated))

    def same_as(self, other: "ExitBatch") -> bool:
        return (np.array_equal(self.tau, other.tau) and np.array_equal(self.x_exit, other.x_exit)
                and np.array_equal(self.n_steps, other.n_steps)
                and np.array_equal(self.flags, other.flags))

    def write_csv(self, path) -> None:
        """Dump ``sample_index, tau, x_exit1..d, n_steps`` for debugging."""
        d = self.x_exit.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_index", "tau"] + [f"x_exit{i + 1}" for i in range(d)] + ["n_steps"])
            for k in range(len(self)):
                w.writerow([k, repr(float(self.tau[k]))]
                           + [repr(float(v)) for v in self.x_exit[k]] + [int(self.n_steps[k])])


def _kernel_args(spec: SdeSpec, dom: DomainSpec):
    lo, hi, c, r = dom.arrays()
    inside = dom.inside_fn if dom.kind == dm.GENERIC else dm._always_inside
    kernel = _make_kernel(spec.dim, spec.drift_fn, spec.diffusion_fn, inside)
    return kernel, (dom.kind, lo, hi, c, r, dom.boundary_tol)


def _check_start(spec, dom, x0):
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.size != spec.dim or dom.dim != spec.dim:
        raise ValueError("dimension mismatch between SDE, domain and start point")
    if not dom.in_closure(x0):
        raise ValueError(f"start point {x0} is outside the closure of the domain")
    return x0


def sample_exit_batch(spec: SdeSpec, dom: DomainSpec, x0, step: StepConfig, seed: int, n: int,
                      workers: int = 1, start: int = 0) -> ExitBatch:
    """Exit samples ``start .. start + n - 1``; sample k uses stream ``(seed, k)``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    x0 = _check_start(spec, dom, x0)
    d = spec.dim
    tau = np.zeros(n)
    xexit = np.tile(x0, (n, 1))
    nsteps = np.zeros(n, dtype=np.int64)
    flags = np.zeros(n, dtype=np.int8)
    if dom.on_boundary(x0):
        return ExitBatch(tau, xexit, nsteps, flags)
    lo, hi = dom.bounding_box()
    spec.validate_on(lo, hi)
    kernel, args = _kernel_args(spec, dom)
    s64 = as_u64(seed)

    def run(a, b):
        kernel(*args, x0, float(step.h), int(step.max_steps), bool(step.bridge_correction),
                     s64, start + a, start + b, tau[a:b], xexit[a:b], nsteps[a:b], flags[a:b])

    workers = max(1, int(workers))
    if workers == 1:
        run(0, n)
    else:
        edges = np.linspace(0, n, workers + 1).astype(int)
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(run, edges[:-1], edges[1:]))
    bad = np.flatnonzero(flags == NONFINITE)
    if bad.size:
        raise NumericalError(f"sample {start + bad[0]}: Euler step produced a non-finite value")
    bad = np.flatnonzero(flags == GEOMETRY)
    if bad.size:
        raise GeometryError(f"sample {start + bad[0]}: boundary bisection did not converge")
    return ExitBatch(tau, xexit, nsteps, flags)


def sample_exit(spec: SdeSpec, dom: DomainSpec, x0, step: StepConfig, rng: RngStream,
                time_zero: bool = False) -> ExitSample:
    """One exit sample on the stream ``rng``.

    ``time_zero=True`` applies the z = 0 convention: the space-time process
    starts on the boundary of the time component, so tau = 0 at x0.
    """
    x0 = _check_start(spec, dom, x0)
    if time_zero:
        return ExitSample(0.0, x0.copy(), 0, ExitVia.TIME_ZERO_CONVENTION, False)
    batch = sample_exit_batch(spec, dom, x0, step, rng.seed, 1, start=rng.stream_index)
    return batch[0]


def sample_exit_reference(spec: SdeSpec, dom: DomainSpec, x0, step: StepConfig,
                          rng: RngStream) -> ExitSample:
    """Slow pure-Python walk with the same stream layout (for cross-checks)."""
    x = _check_start(spec, dom, x0)
    if dom.on_boundary(x):
        return ExitSample(0.0, x.copy(), 0, ExitVia.SPATIAL_BOUNDARY, False)
    lo, hi, c, r = dom.arrays()
    h = step.h
    for n in range(1, step.max_steps + 1):
        xi = np.array([rng.normal() for _ in range(spec.dim)])
        y = euler_step(x, spec, h, xi)
        if not dom.contains(y):
            lam, hit = dm.boundary_crossing(dom, x, y)
            return ExitSample((n - 1 + lam) * h, hit, n, ExitVia.SPATIAL_BOUNDARY, False)
        if step.bridge_correction and dom.kind != dm.GENERIC:
            mid = np.empty(spec.dim)
            s = spec.diffusion(x).ravel()
            if dom.kind == dm.BOX:
                p = dm.bridge_box(lo, hi, x, y, s, h)
            else:
                p = dm.bridge_ball(c, r, x, y, s, h)
            if p > 0.0 and rng.uniform() < p:
                if dom.kind == dm.BOX:
                    dm.bridge_box_exit(lo, hi, x, y, s, h, mid)
                else:
                    dm.bridge_ball_exit(c, r, x, y, mid)
                return ExitSample((n - 0.5) * h, mid, n, ExitVia.SPATIAL_BOUNDARY, False)
        x = y
    return ExitSample(step.max_steps * h, x, step.max_steps, ExitVia.SPATIAL_BOUNDARY, True)
