"""Exact event-driven simulation of excursions away from zero.

The path drifts down at rate b and jumps up at Poisson rate nu(0,inf); between
jumps nothing else happens, so excursions are simulated exactly from the jump
skeleton.  Phase 1 runs below zero until the first upcrossing (giving tau_0^+
and the depth Hhat_0), phase 2 runs the remaining above-zero part until the
path creeps back down to 0 (giving T_0 - tau_0^+ and the height H_0).

Two samplers cover the two ways an excursion can be conditioned:

* :func:`sample_excursions` -- the direct phase-1/phase-2 recursion.  In the
  transient regime paths that sink below the depth cap M are censored with the
  certified Pollaczek-Khinchine bias bound psi_ruin(M) per censored path.
* :func:`sample_complete_excursions` -- exact sampling *given* tau_0^+ < inf:
  the upcrossing endpoints (undershoot U, overshoot V) carry the explicit
  density b^{-1} nu(x+dy) dx, and conditionally on them the below part
  (time-reversed) and the above part are independent copies of the process
  started at U and V and killed at 0.  Both halves are then plain killed
  segments; no censoring bias exists by construction.

Reproducibility contract: a 64-bit master seed plus a worker index defines the
counter-based stream Philox(key=[seed, worker]); worker w simulates a fixed
block of sample indices, and results are merged in worker order.  Fixed seed +
fixed worker_count is bit-identical regardless of scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import fftconvolve

from .model import DomainError, JumpMeasure, ProcessSpec

__all__ = [
    "SimConfig",
    "ExcursionSample",
    "ExcursionBatch",
    "SegmentBatch",
    "sample_excursion",
    "sample_upper_segment",
    "sample_excursions",
    "sample_upper_segments",
    "sample_complete_excursions",
    "sample_excursions_split",
    "ruin_curve",
    "ruin_probability",
    "depth_cap_for_bias",
    "estimate_joint_laplace",
    "joint_laplace_closed_form",
    "worker_stream",
    "split_counts",
    "STATUS_NAMES",
]

STATUS_COMPLETE = 0
STATUS_CENSORED_DEPTH = 1
STATUS_CENSORED_JUMPS = 2
STATUS_ZERO_HIT = 3
STATUS_NAMES = {
    STATUS_COMPLETE: "complete",
    STATUS_CENSORED_DEPTH: "censored_depth",
    STATUS_CENSORED_JUMPS: "censored_jumps",
    STATUS_ZERO_HIT: "zero_hit",
}
STATUS_CODES = {v: k for k, v in STATUS_NAMES.items()}

# active-set kernels hand paths below this population to per-path block mode
_COMPACT_THRESHOLD = 192
_BLOCK0 = 64
_BLOCK_MAX = 65536


@dataclass(frozen=True)
class SimConfig:
    """Simulation knobs.  depth_cap=None means "auto" in the transient regime
    (smallest M with psi_ruin(M) <= 1e-4); it is ignored when recurrent."""

    seed: int
    n_samples: int
    depth_cap: float | None = None
    jump_cap: int = 10_000_000
    worker_count: int = 1
    auto_bias_target: float = 1e-4

    def __post_init__(self):
        if self.n_samples <= 0:
            raise DomainError("n_samples must be positive")
        if self.jump_cap < 1:
            raise DomainError("jump_cap must be >= 1")
        if self.depth_cap is not None and self.depth_cap <= 0:
            raise DomainError("depth_cap must be > 0 when given")
        if self.worker_count < 1:
            raise DomainError("worker_count must be >= 1")


@dataclass(frozen=True)
class ExcursionSample:
    tau_plus: float
    t_above: float
    h0: float
    hhat0: float
    status: str
    jump_sum: float
    n_jumps: int


@dataclass
class ExcursionBatch:
    """Column store of excursion quadruples plus audit fields."""

    tau_plus: np.ndarray
    t_above: np.ndarray
    h0: np.ndarray
    hhat0: np.ndarray
    jump_sum: np.ndarray
    n_jumps: np.ndarray
    status: np.ndarray  # int8 codes
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.tau_plus)

    def sample(self, i: int) -> ExcursionSample:
        return ExcursionSample(
            tau_plus=float(self.tau_plus[i]),
            t_above=float(self.t_above[i]),
            h0=float(self.h0[i]),
            hhat0=float(self.hhat0[i]),
            status=STATUS_NAMES[int(self.status[i])],
            jump_sum=float(self.jump_sum[i]),
            n_jumps=int(self.n_jumps[i]),
        )

    def field_values(self, name: str) -> np.ndarray:
        if name not in ("tau_plus", "t_above", "h0", "hhat0"):
            raise DomainError(f"unknown sample field {name!r}")
        return getattr(self, name)

    def status_counts(self) -> dict:
        return {
            name: int(np.count_nonzero(self.status == code))
            for code, name in STATUS_NAMES.items()
        }

    @classmethod
    def concat(cls, parts, meta=None):
        if not parts:
            raise DomainError("nothing to concatenate")
        return cls(
            tau_plus=np.concatenate([p.tau_plus for p in parts]),
            t_above=np.concatenate([p.t_above for p in parts]),
            h0=np.concatenate([p.h0 for p in parts]),
            hhat0=np.concatenate([p.hhat0 for p in parts]),
            jump_sum=np.concatenate([p.jump_sum for p in parts]),
            n_jumps=np.concatenate([p.n_jumps for p in parts]),
            status=np.concatenate([p.status for p in parts]),
            meta=meta or dict(parts[0].meta),
        )

    def write_csv(self, path) -> None:
        """Raw dump: header per the external interface, metadata in # lines."""
        with open(path, "w", newline="\n") as fh:
            for key in sorted(self.meta):
                fh.write(f"# {key} = {self.meta[key]}\n")
            fh.write("tau_plus,t_above,h0,hhat0,status,n_jumps\n")
            for i in range(len(self)):
                fh.write(
                    f"{self.tau_plus[i]!r},{self.t_above[i]!r},{self.h0[i]!r},"
                    f"{self.hhat0[i]!r},{STATUS_NAMES[int(self.status[i])]},"
                    f"{int(self.n_jumps[i])}\n"
                )

    @classmethod
    def read_csv(cls, path) -> "ExcursionBatch":
        meta = {}
        cols = ([], [], [], [], [], [])
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line.startswith("#"):
                    key, _, val = line[1:].partition("=")
                    meta[key.strip()] = val.strip()
                elif line and not line.startswith("tau_plus,"):
                    f0, f1, f2, f3, st, nj = line.split(",")
                    cols[0].append(float(f0))
                    cols[1].append(float(f1))
                    cols[2].append(float(f2))
                    cols[3].append(float(f3))
                    cols[4].append(STATUS_CODES[st])
                    cols[5].append(int(nj))
        n = len(cols[0])
        return cls(
            tau_plus=np.array(cols[0]),
            t_above=np.array(cols[1]),
            h0=np.array(cols[2]),
            hhat0=np.array(cols[3]),
            jump_sum=np.full(n, np.nan),
            n_jumps=np.array(cols[5], dtype=np.int64),
            status=np.array(cols[4], dtype=np.int8),
            meta=meta,
        )


@dataclass
class SegmentBatch:
    """Above-zero first-passage segments: started at x > 0, killed at 0."""

    x0: np.ndarray
    tau0_minus: np.ndarray
    sup: np.ndarray
    jump_sum: np.ndarray
    n_jumps: np.ndarray
    capped: np.ndarray  # bool: budget exhausted, fields are partial lower bounds
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.x0)


# --- RNG streams ---------------------------------------------------------------


def worker_stream(seed: int, worker: int) -> np.random.Generator:
    """Counter-based stream for one worker: Philox keyed on (seed, worker)."""
    return np.random.Generator(np.random.Philox(key=np.array([seed, worker], dtype=np.uint64)))


def split_counts(n: int, workers: int) -> list:
    base, extra = divmod(n, workers)
    return [base + (1 if w < extra else 0) for w in range(workers)]


def _jump_drawer(nu: JumpMeasure):
    """Vectorized jump sampler for a measure: inverse CDF for pareto_tail,
    Walker alias sampling for bounded_discrete."""
    if nu.kind == "pareto_tail":
        xm, g = nu.xmin, nu.gamma

        def draw(rng, m):
            return xm * (1.0 + rng.pareto(g, m))

        return draw
    xs = np.array([x for x, _ in nu.atoms])
    probs = np.array([w for _, w in nu.atoms]) / nu.total_mass
    k = len(xs)
    # Walker alias table
    scaled = probs * k
    alias = np.zeros(k, dtype=np.int64)
    accept = np.ones(k)
    small = [i for i in range(k) if scaled[i] < 1.0]
    large = [i for i in range(k) if scaled[i] >= 1.0]
    scaled = scaled.copy()
    while small and large:
        s, l = small.pop(), large.pop()
        accept[s] = scaled[s]
        alias[s] = l
        scaled[l] = scaled[l] - (1.0 - scaled[s])
        (small if scaled[l] < 1.0 else large).append(l)
    for i in small + large:
        accept[i] = 1.0

    def draw(rng, m):
        idx = rng.integers(0, k, size=m)
        u = rng.random(m)
        take_alias = u >= accept[idx]
        return xs[np.where(take_alias, alias[idx], idx)]

    return draw


# --- pure-python reference samplers (stub-friendly rng) -------------------------


def _draw_jump_scalar(nu: JumpMeasure, rng) -> float:
    # reference path uses inverse CDF for both families; u in (0, 1]
    return float(nu.jump_quantile(1.0 - rng.random()))


def sample_excursion(spec: ProcessSpec, rng, config: SimConfig) -> ExcursionSample:
    """One excursion by the exact two-phase event recursion.

    ``rng`` needs ``exponential(scale)`` and ``random()`` (numpy Generators
    qualify; tests use scripted stubs).  This reference implementation mirrors
    the vectorized kernels' semantics one event at a time.
    """
    mass = spec.nu.total_mass
    depth_cap = _resolve_depth_cap(spec, config)
    x = 0.0
    t = 0.0
    maxdepth = 0.0
    jsum = 0.0
    njump = 0
    # phase 1: below zero until the first upcrossing
    while True:
        e = rng.exponential(1.0 / mass)
        pre = x - spec.b * e
        depth = -pre
        if depth > depth_cap:
            tau_part = t + (depth_cap + x) / spec.b
            return ExcursionSample(tau_part, 0.0, 0.0, depth_cap, "censored_depth", jsum, njump)
        maxdepth = max(maxdepth, depth)
        if njump + 1 > config.jump_cap:
            return ExcursionSample(t + e, 0.0, 0.0, maxdepth, "censored_jumps", jsum, njump)
        j = _draw_jump_scalar(spec.nu, rng)
        t += e
        jsum += j
        njump += 1
        pos = pre + j
        if pos > 0.0:
            tau_plus, hhat0 = t, maxdepth
            y = pos
            break
        if pos == 0.0:
            return ExcursionSample(t, 0.0, 0.0, maxdepth, "zero_hit", jsum, njump)
        x = pos
    # phase 2: above zero until creeping back to 0
    t_above = 0.0
    sup = y
    while True:
        e = rng.exponential(1.0 / mass)
        if spec.b * e >= y:
            t_above += y / spec.b
            return ExcursionSample(tau_plus, t_above, sup, hhat0, "complete", jsum, njump)
        if njump + 1 > config.jump_cap:
            return ExcursionSample(
                tau_plus, t_above + e, sup, hhat0, "censored_jumps", jsum, njump
            )
        j = _draw_jump_scalar(spec.nu, rng)
        t_above += e
        jsum += j
        njump += 1
        y = y - spec.b * e + j
        sup = max(sup, y)


def sample_upper_segment(spec: ProcessSpec, x: float, rng, jump_cap: int = 10_000_000) -> dict:
    """Above-zero dynamics from x > 0 until the (exact, creeping) hit of 0.

    Returns tau0_minus, sup (running supremum including the start), status.
    """
    if x <= 0.0:
        raise DomainError("sample_upper_segment requires x > 0")
    mass = spec.nu.total_mass
    y = x
    t = 0.0
    sup = x
    jsum = 0.0
    njump = 0
    while True:
        e = rng.exponential(1.0 / mass)
        if spec.b * e >= y:
            return {
                "tau0_minus": t + y / spec.b,
                "sup": sup,
                "status": "complete",
                "jump_sum": jsum,
                "n_jumps": njump,
            }
        if njump + 1 > jump_cap:
            return {
                "tau0_minus": t + e,
                "sup": sup,
                "status": "censored_jumps",
                "jump_sum": jsum,
                "n_jumps": njump,
            }
        j = _draw_jump_scalar(spec.nu, rng)
        t += e
        jsum += j
        njump += 1
        y = y - spec.b * e + j
        sup = max(sup, y)


# --- vectorized kernels ----------------------------------------------------------


def _finish_segment_block(b, mass, draw_jumps, rng, y, budget):
    """Finish one straggler segment with geometrically growing draw blocks.

    Returns (duration, sup, jump_sum, n_jumps, capped).  Event order inside a
    block matches the scalar recursion: the hit test precedes the jump, and a
    path is censored when it would take jump number budget+1.
    """
    dur = 0.0
    sup = y
    jsum = 0.0
    njump = 0
    block = _BLOCK0
    while True:
        r = budget - njump  # jumps still allowed
        m = block
        e = rng.standard_exponential(m) / mass
        j = draw_jumps(rng, m)
        ycum = y + np.cumsum(j - b * e)
        ypre = np.concatenate(([y], ycum[:-1])) - b * e  # position before each jump
        hits = np.nonzero(ypre <= 0.0)[0]
        k_hit = int(hits[0]) if hits.size else None
        if k_hit is not None and k_hit <= r:
            yk = y if k_hit == 0 else float(ycum[k_hit - 1])
            dur += float(np.sum(e[:k_hit])) + yk / b
            if k_hit > 0:
                sup = max(sup, float(np.max(ycum[:k_hit])))
            return dur, sup, jsum + float(np.sum(j[:k_hit])), njump + k_hit, False
        if r < m:  # would need jump r+1 inside this block: censor at the attempt
            dur += float(np.sum(e[: r + 1]))
            if r > 0:
                sup = max(sup, float(np.max(ycum[:r])))
            return dur, sup, jsum + float(np.sum(j[:r])), njump + r, True
        dur += float(np.sum(e))
        sup = max(sup, float(np.max(ycum)))
        jsum += float(np.sum(j))
        njump += m
        y = float(ycum[-1])
        block = min(block * 4, _BLOCK_MAX)


def _segments_vec(spec: ProcessSpec, x0: np.ndarray, rng, budgets) -> SegmentBatch:
    """Killed first-passage segments from each x0 > 0 (vector active set)."""
    b = spec.b
    mass = spec.nu.total_mass
    draw_jumps = _jump_drawer(spec.nu)
    n = len(x0)
    budgets = np.broadcast_to(np.asarray(budgets, dtype=np.int64), (n,)).copy()

    dur = np.zeros(n)
    sup = x0.astype(float).copy()
    jsum = np.zeros(n)
    njump = np.zeros(n, dtype=np.int64)
    capped = np.zeros(n, dtype=bool)
    y = x0.astype(float).copy()
    active = np.nonzero(x0 > 0.0)[0]

    while active.size > _COMPACT_THRESHOLD:
        m = active.size
        e = rng.standard_exponential(m) / mass
        j = draw_jumps(rng, m)
        ya = y[active]
        hit = b * e >= ya
        over = njump[active] + 1 > budgets[active]
        cens = ~hit & over
        move = ~hit & ~over
        dur[active] += np.where(hit, ya / b, e)
        idx_move = active[move]
        ynew = ya[move] - b * e[move] + j[move]
        y[idx_move] = ynew
        np.maximum.at(sup, idx_move, ynew)
        jsum[idx_move] += j[move]
        njump[idx_move] += 1
        capped[active[cens]] = True
        active = idx_move

    for idx in active:
        d, s, js, nj, cap = _finish_segment_block(
            b, mass, draw_jumps, rng, float(y[idx]), int(budgets[idx] - njump[idx])
        )
        dur[idx] += d
        sup[idx] = max(sup[idx], s)
        jsum[idx] += js
        njump[idx] += nj
        capped[idx] = cap

    return SegmentBatch(
        x0=np.asarray(x0, dtype=float),
        tau0_minus=dur,
        sup=sup,
        jump_sum=jsum,
        n_jumps=njump,
        capped=capped,
    )


def _phase1_vec(spec: ProcessSpec, n: int, rng, depth_cap: float, jump_cap: int):
    """Below-zero phase for n excursions started at 0.

    Returns dict of arrays: tau (time of upcross / partial), hhat (max depth /
    partial), jsum, njump, overshoot (>0 where upcrossed), status.
    """
    b = spec.b
    mass = spec.nu.total_mass
    draw_jumps = _jump_drawer(spec.nu)

    x = np.zeros(n)
    t = np.zeros(n)
    maxdepth = np.zeros(n)
    jsum = np.zeros(n)
    njump = np.zeros(n, dtype=np.int64)
    overshoot = np.zeros(n)
    status = np.full(n, STATUS_COMPLETE, dtype=np.int8)
    active = np.arange(n)

    def step_batch(idx, e, j):
        """Advance paths idx by one (E, J) event; returns surviving subset."""
        xa = x[idx]
        pre = xa - b * e
        depth = -pre
        deep = depth > depth_cap
        if np.any(deep):
            di = idx[deep]
            status[di] = STATUS_CENSORED_DEPTH
            t[di] += (depth_cap + x[di]) / b
            maxdepth[di] = depth_cap
            keep = ~deep
            idx, e, j, pre, depth = idx[keep], e[keep], j[keep], pre[keep], depth[keep]
        np.maximum.at(maxdepth, idx, depth)
        over_budget = njump[idx] + 1 > jump_cap
        if np.any(over_budget):
            oi = idx[over_budget]
            status[oi] = STATUS_CENSORED_JUMPS
            t[oi] += e[over_budget]
            keep = ~over_budget
            idx, e, j, pre = idx[keep], e[keep], j[keep], pre[keep]
        t[idx] += e
        jsum[idx] += j
        njump[idx] += 1
        pos = pre + j
        up = pos > 0.0
        zero = pos == 0.0
        ui = idx[up]
        overshoot[ui] = pos[up]
        status[idx[zero]] = STATUS_ZERO_HIT
        stay = ~up & ~zero
        x[idx[stay]] = pos[stay]
        return idx[stay]

    while active.size > _COMPACT_THRESHOLD:
        m = active.size
        e = rng.standard_exponential(m) / mass
        j = draw_jumps(rng, m)
        active = step_batch(active, e, j)

    # stragglers: per-path growing blocks, same event order as the scalar path
    for i in active:
        res = _finish_phase1_block(
            b, mass, draw_jumps, rng,
            float(x[i]), float(maxdepth[i]), depth_cap, int(jump_cap - njump[i]),
        )
        t[i] += res["t"]
        maxdepth[i] = max(maxdepth[i], res["maxdepth"])
        jsum[i] += res["jsum"]
        njump[i] += res["njump"]
        overshoot[i] = res["overshoot"]
        status[i] = res["status"]

    return {
        "tau": t,
        "hhat": maxdepth,
        "jsum": jsum,
        "njump": njump,
        "overshoot": overshoot,
        "status": status,
    }


def _resolve_depth_cap(spec: ProcessSpec, config: SimConfig) -> float:
    if spec.regime == "recurrent":
        return math.inf
    if config.depth_cap is not None:
        return config.depth_cap
    return depth_cap_for_bias(spec, config.auto_bias_target)


def _direct_worker(spec: ProcessSpec, n: int, rng, depth_cap: float, jump_cap: int) -> ExcursionBatch:
    p1 = _phase1_vec(spec, n, rng, depth_cap, jump_cap)
    status = p1["status"]
    up = np.nonzero((status == STATUS_COMPLETE) & (p1["overshoot"] > 0.0))[0]
    seg = _segments_vec(spec, p1["overshoot"][up], rng, jump_cap - p1["njump"][up])
    t_above = np.zeros(n)
    h0 = np.zeros(n)
    t_above[up] = seg.tau0_minus
    h0[up] = seg.sup
    jsum = p1["jsum"]
    njump = p1["njump"]
    jsum[up] += seg.jump_sum
    njump[up] += seg.n_jumps
    status[up[seg.capped]] = STATUS_CENSORED_JUMPS
    return ExcursionBatch(
        tau_plus=p1["tau"],
        t_above=t_above,
        h0=h0,
        hhat0=p1["hhat"],
        jump_sum=jsum,
        n_jumps=njump,
        status=status,
    )


def _conditioned_worker(spec: ProcessSpec, n: int, rng, jump_cap: int) -> ExcursionBatch:
    """Complete excursions via the endpoint decomposition (no depth censoring)."""
    nu = spec.nu
    u01 = rng.random(n)
    under = np.asarray(nu.integrated_tail_quantile(u01), dtype=float)
    # overshoot: (J | J > U) - U
    if nu.kind == "pareto_tail":
        scale = np.maximum(under, nu.xmin)
        cond_jump = scale * (1.0 + rng.pareto(nu.gamma, n))
    else:
        u2 = 1.0 - rng.random(n)
        tails_at_u = np.asarray(nu.tail_open(under), dtype=float)
        # inverse CDF of the conditional tail: smallest j with nubar_open(j) <= u2 * tail
        xs = np.array([x for x, _ in nu.atoms])
        cond_jump = np.empty(n)
        for i in range(n):  # oracle-scale only; vector path is pareto
            target = u2[i] * tails_at_u[i]
            for x in xs:
                if x > under[i] and nu.tail_open(x) + nu.tail(x) - nu.tail(x) <= target + 1e-300:
                    pass
            candidates = xs[xs > under[i]]
            w = np.array([dict(nu.atoms)[c] for c in candidates])
            cum = np.cumsum(w) / w.sum()
            cond_jump[i] = candidates[np.searchsorted(cum, min(u2[i], 1.0), side="left")]
    over = cond_jump - under
    budget = max(jump_cap // 2, 1)
    seg_below = _segments_vec(spec, under, rng, budget)  # time-reversed below part
    seg_above = _segments_vec(spec, over, rng, budget)
    capped = seg_below.capped | seg_above.capped
    status = np.where(capped, STATUS_CENSORED_JUMPS, STATUS_COMPLETE).astype(np.int8)
    return ExcursionBatch(
        tau_plus=seg_below.tau0_minus,
        t_above=seg_above.tau0_minus,
        h0=seg_above.sup,
        hhat0=seg_below.sup,
        jump_sum=seg_below.jump_sum + seg_above.jump_sum + under + over,
        n_jumps=seg_below.n_jumps + seg_above.n_jumps + 1,
        status=status,
    )


# --- worker fan-out ---------------------------------------------------------------


def _scatter(task, spec, counts, seed, extra):
    jobs = [
        (task, spec, int(n_w), int(seed), int(w), extra)
        for w, n_w in enumerate(counts)
        if n_w > 0
    ]
    return jobs


def _run_job(job):
    task, spec, n_w, seed, w, extra = job
    rng = worker_stream(seed, w)
    if task == "direct":
        return _direct_worker(spec, n_w, rng, extra["depth_cap"], extra["jump_cap"])
    if task == "conditioned":
        return _conditioned_worker(spec, n_w, rng, extra["jump_cap"])
    if task == "segments":
        x0 = extra["x0"][extra["offsets"][w] : extra["offsets"][w] + n_w]
        return _segments_vec(spec, x0, rng, extra["jump_cap"])
    raise DomainError(f"unknown worker task {task!r}")


def _run_jobs(jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    import multiprocessing as mp

    with mp.get_context("fork").Pool(min(workers, len(jobs))) as pool:
        return pool.map(_run_job, jobs)


def sample_excursions(spec: ProcessSpec, config: SimConfig) -> ExcursionBatch:
    """Direct phase-1/phase-2 sampler, fanned out across worker streams."""
    depth_cap = _resolve_depth_cap(spec, config)
    counts = split_counts(config.n_samples, config.worker_count)
    extra = {"depth_cap": depth_cap, "jump_cap": config.jump_cap}
    parts = _run_jobs(_scatter("direct", spec, counts, config.seed, extra), config.worker_count)
    meta = {
        "sampler": "direct",
        "seed": config.seed,
        "workers": config.worker_count,
        "depth_cap": depth_cap,
        "jump_cap": config.jump_cap,
    }
    return ExcursionBatch.concat(parts, meta=meta)


def sample_complete_excursions(spec: ProcessSpec, config: SimConfig) -> ExcursionBatch:
    """n_samples excursions drawn exactly from the law given tau_0^+ < inf."""
    counts = split_counts(config.n_samples, config.worker_count)
    extra = {"jump_cap": config.jump_cap}
    parts = _run_jobs(
        _scatter("conditioned", spec, counts, config.seed, extra), config.worker_count
    )
    meta = {
        "sampler": "conditioned",
        "seed": config.seed,
        "workers": config.worker_count,
        "jump_cap": config.jump_cap,
    }
    return ExcursionBatch.concat(parts, meta=meta)


def sample_excursions_split(spec: ProcessSpec, config: SimConfig):
    """(complete-batch, n_never_returned) equivalent to n_samples direct starts.

    Each start returns with probability m1/b (= 1 in the recurrent regime);
    the binomial split is drawn first, then that many conditioned excursions.
    """
    p_return = spec.m1 / spec.b
    rng = worker_stream(config.seed, 2**32)
    n_complete = int(rng.binomial(config.n_samples, p_return))
    n_never = config.n_samples - n_complete
    if n_complete == 0:
        raise DomainError("no returning excursions at this n_samples")
    batch = sample_complete_excursions(spec, replace(config, n_samples=n_complete))
    batch.meta["n_never_returned"] = n_never
    batch.meta["n_started"] = config.n_samples
    return batch, n_never


def sample_upper_segments(
    spec: ProcessSpec, x0, seed: int, workers: int = 1, jump_cap: int = 10_000_000
) -> SegmentBatch:
    """Vectorized killed segments from the array of starting points x0."""
    x0 = np.asarray(x0, dtype=float)
    if np.any(x0 <= 0.0):
        raise DomainError("segment starts must be > 0")
    counts = split_counts(len(x0), workers)
    offsets = np.concatenate([[0], np.cumsum(counts)])[:-1]
    extra = {"x0": x0, "offsets": offsets, "jump_cap": jump_cap}
    parts = _run_jobs(_scatter("segments", spec, counts, seed, extra), workers)
    return SegmentBatch(
        x0=x0,
        tau0_minus=np.concatenate([p.tau0_minus for p in parts]),
        sup=np.concatenate([p.sup for p in parts]),
        jump_sum=np.concatenate([p.jump_sum for p in parts]),
        n_jumps=np.concatenate([p.n_jumps for p in parts]),
        capped=np.concatenate([p.capped for p in parts]),
        meta={"seed": seed, "workers": workers, "jump_cap": jump_cap},
    )


# --- Pollaczek-Khinchine ruin series ---------------------------------------------


def ruin_curve(spec: ProcessSpec, x_max: float, dx: float | None = None, tail_tol: float = 1e-10):
    """psi_ruin on a grid: (1-phi) sum_{n>=1} phi^n (1 - F_I^{*n}(x)), phi = m1/b.

    F_I is the integrated-tail law (density nubar/m1); convolution powers are
    trapezoid grid convolutions, and the series stops once the remaining
    geometric mass phi^{n+1} < tail_tol.
    """
    if spec.regime != "transient":
        raise DomainError("ruin series diverges in the recurrent regime (phi = 1)")
    if x_max <= 0.0:
        raise DomainError("x_max must be > 0")
    if dx is None:
        dx = max(spec.nu.xmin / 50.0, x_max / 400_000.0)
    phi_ = spec.m1 / spec.b
    k = int(math.ceil(x_max / dx))
    grid = dx * np.arange(k + 1)
    f_left = np.asarray(spec.nu.tail_open(grid), dtype=float) / spec.m1
    f_right = np.asarray(spec.nu.tail(grid), dtype=float) / spec.m1

    def cum_trap(c):
        inc = 0.5 * dx * (c[:-1] + c[1:])
        return np.concatenate(([0.0], np.cumsum(inc)))

    def trap_conv(c):
        conv_a = fftconvolve(f_left, c)[: k + 1]
        conv_b = fftconvolve(f_right, c)[: k + 1]
        out = 0.5 * dx * ((conv_a - f_left * c[0]) + (conv_b - f_right[0] * c))
        out[0] = 0.0
        return out

    density = 0.5 * (f_left + f_right)  # n = 1 convolution power
    total = np.zeros(k + 1)
    weight = (1.0 - phi_) * phi_
    n = 1
    while True:
        total += weight * (1.0 - cum_trap(density))
        if phi_ ** (n + 1) < tail_tol:
            break
        density = trap_conv(density)
        weight *= phi_
        n += 1
    return grid, np.clip(total, 0.0, 1.0)


def ruin_probability(spec: ProcessSpec, x: float, dx: float | None = None) -> float:
    """psi_ruin(x): chance the path ever climbs back to 0 from depth x below it."""
    if x < 0.0:
        raise DomainError("ruin_probability requires x >= 0")
    if x == 0.0:
        if spec.regime != "transient":
            raise DomainError("ruin series diverges in the recurrent regime")
        return spec.m1 / spec.b
    grid, vals = ruin_curve(spec, x, dx)
    return float(np.interp(x, grid, vals))


def depth_cap_for_bias(spec: ProcessSpec, bias: float = 1e-4) -> float:
    """Smallest grid depth M with psi_ruin(M) <= bias (doubling search)."""
    if not (0.0 < bias < 1.0):
        raise DomainError("bias target must lie in (0, 1)")
    x_max = 16.0 * spec.nu.xmin
    for _ in range(40):
        grid, vals = ruin_curve(spec, x_max)
        below = np.nonzero(vals <= bias)[0]
        if below.size:
            return float(grid[below[0]])
        x_max *= 2.0
    raise DomainError("depth_cap_for_bias: bias target unreachable")


# --- joint Laplace functional ------------------------------------------------------


def estimate_joint_laplace(batch: ExcursionBatch, q1: float, q2: float):
    """Mean and standard error of exp(-q1 tau_0^+ - q2 (T_0 - tau_0^+)).

    Complete samples contribute the exponential; censored ones contribute 0
    (they stand in for tau_0^+ = inf, with the censoring bias bounded via the
    ruin series); zero hits contribute 0 (the path never passed above 0).
    """
    if q1 < 0 or q2 < 0:
        raise DomainError("Laplace arguments must be >= 0")
    n = len(batch)
    if n == 0:
        raise DomainError("empty sample batch")
    complete = batch.status == STATUS_COMPLETE
    w = np.zeros(n)
    w[complete] = np.exp(-q1 * batch.tau_plus[complete] - q2 * batch.t_above[complete])
    mean = float(w.mean())
    se = float(w.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return mean, se


def joint_laplace_closed_form(spec: ProcessSpec, q1: float, q2: float) -> float:
    """E[exp(-q1 tau_0^+ - q2 (T_0-tau_0^+)); tau_0^+ < inf]
    = 1 - (q1-q2) / (b (Phi(q1)-Phi(q2))), with the diagonal by continuity."""
    from .model import phi, psi_prime

    if q1 < 0 or q2 < 0:
        raise DomainError("Laplace arguments must be >= 0")
    if q1 == q2:
        return 1.0 - psi_prime(spec, phi(spec, q1)) / spec.b
    return 1.0 - (q1 - q2) / (spec.b * (phi(spec, q1) - phi(spec, q2)))
