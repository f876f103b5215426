"""Slotted stochastic simulation of the switch under any policy.

Each slot: the policy picks an admissible memory configuration from the
current ages; every (scheduled request, user) pair draws an independent
link success; a request whose links all succeeded draws a swap success; all
unused links are discarded at the slot boundary; served ages reset to 1,
all others climb by 1.  Ages are sampled at the start of the slot, before
that slot's outcome can reset them, and averages cover slots
``(burn_in, slots]``.

Randomness is consumed in a fixed order -- policy draws first, then for
each scheduled request in ascending id order one double per user (ascending)
and, only when all its links succeed, one swap double.  Unscheduled requests
consume nothing.  The pure-Python path below is the reference semantics; the
compiled kernels in :mod:`qswitch_age._kernels` replay the identical stream
and are used automatically for long untraced runs of the built-in policies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .model import Instance, MemoryConfiguration, ValidationError, is_admissible
from .policies import MMAPolicy, Policy, SMWPolicy, SSRPolicy
from .sampling import RngStream, split_marginals


class SimulationError(RuntimeError):
    """A policy or the dynamics violated a simulation contract."""


@dataclass
class AgeState:
    """Per-request ages (slots since last service, at least 1) and the slot
    counter.  Owned by exactly one replication."""

    h: np.ndarray
    t: int = 1

    @classmethod
    def fresh(cls, inst: Instance) -> "AgeState":
        return cls(h=np.ones(inst.n_requests, dtype=np.int64), t=1)


@dataclass(frozen=True)
class SlotOutcome:
    """Everything one slot produced: the configuration, scheduled flags,
    per-user link outcomes (scheduled requests only), all-links flags,
    service flags, and the ages observed at the start of the slot."""

    x: MemoryConfiguration
    u: np.ndarray
    b: dict[int, tuple[int, ...]]
    c: np.ndarray
    d: np.ndarray
    h: np.ndarray


@dataclass(frozen=True)
class SimResult:
    """Time-average ages over the post-burn-in window of one replication."""

    policy: str
    per_request: np.ndarray
    overall: float
    slots: int
    burn_in: int
    seed: int
    stream: int
    scheduled_counts: np.ndarray
    served_counts: np.ndarray
    trace: tuple[SlotOutcome, ...] | None = None


@dataclass(frozen=True)
class ReplicationStats:
    """Mean, standard error, and 95% confidence interval of the overall
    average age across independent replications."""

    results: tuple[SimResult, ...]
    overall_mean: float
    overall_se: float
    ci95: tuple[float, float]
    per_request_mean: np.ndarray
    n_reps: int
    zero_width: bool


def slot_step(
    policy: Policy, inst: Instance, age: AgeState, rng: RngStream
) -> SlotOutcome:
    """Advance one slot, mutating ``age``; reference implementation."""
    h_before = age.h.copy()
    x = policy.decide(inst, age, rng)
    if not is_admissible(x, inst):
        raise SimulationError(
            f"policy {policy.name!r} returned inadmissible configuration "
            f"{x.scheduled} (memory {inst.memory})"
        )
    n = inst.n_requests
    u = np.zeros(n, dtype=bool)
    c = np.zeros(n, dtype=bool)
    d = np.zeros(n, dtype=bool)
    b: dict[int, tuple[int, ...]] = {}
    for rid in x.scheduled:
        u[rid] = True
        req = inst.requests[rid]
        flags = []
        all_ok = True
        for user in req.users:
            ok = rng.random() < inst.network.p[user - 1]
            flags.append(1 if ok else 0)
            all_ok = all_ok and ok
        b[rid] = tuple(flags)
        if all_ok:
            c[rid] = True
            if rng.random() < inst.network.q[req.cardinality]:
                d[rid] = True
    for rid in range(n):
        age.h[rid] = 1 if d[rid] else age.h[rid] + 1
    age.t += 1
    return SlotOutcome(x=x, u=u, b=b, c=c, d=d, h=h_before)


def simulate(
    policy: Policy,
    inst: Instance,
    slots: int,
    burn_in: int = 0,
    rng: RngStream | None = None,
    engine: str = "auto",
    trace: bool = False,
) -> SimResult:
    """Run ``slots`` slots from all-ones ages and average the ages observed
    in slots ``(burn_in, slots]``.

    ``engine`` is ``"python"`` (reference loop, required for traces),
    ``"compiled"`` (kernel), or ``"auto"``.  Both engines consume the stream
    identically, so the choice never changes the result.
    """
    if rng is None:
        rng = RngStream(seed=0, stream=0)
    if not 0 <= burn_in < slots:
        raise ValidationError(f"need slots > burn_in >= 0, got {slots}, {burn_in}")
    use_kernel = _kernel_runner(policy) is not None and not trace
    if engine == "python":
        use_kernel = False
    elif engine == "compiled":
        if trace:
            raise ValidationError("traces need the python engine")
        if _kernel_runner(policy) is None:
            raise ValidationError(f"no compiled kernel for policy {policy.name!r}")
        use_kernel = True
    elif engine != "auto":
        raise ValidationError(f"unknown engine {engine!r}")

    if use_kernel:
        return _simulate_kernel(policy, inst, slots, burn_in, rng)
    return _simulate_python(policy, inst, slots, burn_in, rng, trace)


def _simulate_python(policy, inst, slots, burn_in, rng, trace):
    age = AgeState.fresh(inst)
    n = inst.n_requests
    age_sums = np.zeros(n, dtype=np.int64)
    sched_counts = np.zeros(n, dtype=np.int64)
    served_counts = np.zeros(n, dtype=np.int64)
    outcomes: list[SlotOutcome] = []
    for t in range(1, slots + 1):
        if t > burn_in:
            age_sums += age.h
        outcome = slot_step(policy, inst, age, rng)
        sched_counts += outcome.u
        served_counts += outcome.d
        if trace:
            outcomes.append(outcome)
    return _finish(
        policy, inst, slots, burn_in, rng, age_sums, sched_counts,
        served_counts, tuple(outcomes) if trace else None,
    )


def _simulate_kernel(policy, inst, slots, burn_in, rng):
    runner = _kernel_runner(policy)
    arrays = _instance_arrays(inst)
    n = inst.n_requests
    age_sums = np.zeros(n, dtype=np.int64)
    sched_counts = np.zeros(n, dtype=np.int64)
    served_counts = np.zeros(n, dtype=np.int64)
    h = np.ones(n, dtype=np.int64)
    state = np.array(rng.state_words(), dtype=np.uint64)
    ok = runner(
        policy, inst, arrays, state, slots, burn_in,
        age_sums, sched_counts, served_counts, h,
    )
    rng.set_state_words(state.tolist())
    if not ok:
        raise SimulationError(
            f"policy {policy.name!r} produced an inadmissible configuration"
        )
    return _finish(
        policy, inst, slots, burn_in, rng, age_sums, sched_counts,
        served_counts, None,
    )


def _finish(policy, inst, slots, burn_in, rng, age_sums, sched, served, trace):
    window = slots - burn_in
    per_request = age_sums / window
    return SimResult(
        policy=policy.name,
        per_request=per_request,
        overall=float(per_request.mean()),
        slots=slots,
        burn_in=burn_in,
        seed=rng.seed,
        stream=rng.stream,
        scheduled_counts=sched,
        served_counts=served,
        trace=trace,
    )


def run_replications(
    policy: Policy,
    inst: Instance,
    slots: int,
    burn_in: int,
    n_reps: int,
    seed: int,
    engine: str = "auto",
    base_stream: int = 0,
) -> ReplicationStats:
    """Independent replications on streams ``base_stream .. +n_reps-1`` of
    ``seed``.

    Every sweep point and policy reuses the same streams, so comparisons
    across points and policies are paired (common random numbers).
    """
    if n_reps < 1:
        raise ValidationError(f"need at least one replication, got {n_reps}")
    results = tuple(
        simulate(
            policy, inst, slots, burn_in, RngStream(seed, base_stream + k),
            engine=engine,
        )
        for k in range(n_reps)
    )
    overalls = np.array([r.overall for r in results])
    mean = float(overalls.mean())
    se = float(overalls.std(ddof=1) / math.sqrt(n_reps)) if n_reps > 1 else 0.0
    return ReplicationStats(
        results=results,
        overall_mean=mean,
        overall_se=se,
        ci95=(mean - 1.96 * se, mean + 1.96 * se),
        per_request_mean=np.mean([r.per_request for r in results], axis=0),
        n_reps=n_reps,
        zero_width=n_reps < 2 or se == 0.0,
    )


# ---------------------------------------------------------------------------
# kernel argument preparation
# ---------------------------------------------------------------------------

_ARRAY_CACHE: dict[int, dict] = {}


def _instance_arrays(inst: Instance) -> dict:
    """Flat int64/float64 views of an instance, cached per instance object."""
    cached = _ARRAY_CACHE.get(id(inst))
    if cached is not None and cached["inst"] is inst:
        return cached
    users_off = np.zeros(inst.n_requests + 1, dtype=np.int64)
    users_flat: list[int] = []
    q_req = np.zeros(inst.n_requests, dtype=np.float64)
    for r in inst.requests:
        users_off[r.id + 1] = users_off[r.id] + r.cardinality
        users_flat.extend(u - 1 for u in r.users)
        q_req[r.id] = inst.network.q[r.cardinality]
    class_off = np.zeros(len(inst.lambdas) + 1, dtype=np.int64)
    class_members: list[int] = []
    m_budget = np.zeros(len(inst.lambdas), dtype=np.int64)
    for ci, lam in enumerate(inst.lambdas):
        members = inst.classes[lam]
        class_off[ci + 1] = class_off[ci] + len(members)
        class_members.extend(members)
        m_budget[ci] = inst.per_class_budget[lam]
    arrays = {
        "inst": inst,
        "users_off": users_off,
        "users_flat": np.array(users_flat, dtype=np.int64),
        "p": np.array(inst.network.p, dtype=np.float64),
        "q_req": q_req,
        "class_off": class_off,
        "class_members": np.array(class_members, dtype=np.int64),
        "m_budget": m_budget,
    }
    _ARRAY_CACHE.clear()
    _ARRAY_CACHE[id(inst)] = arrays
    return arrays


def _mu0_arrays(mu0: dict[int, float], lambdas: Sequence[int]):
    weights = [mu0[lam] for lam in lambdas]
    total = 0.0
    for w in weights:
        total += w
    return np.array(weights, dtype=np.float64), total


def _kernel_runner(policy: Policy):
    if isinstance(policy, SSRPolicy):
        return _run_ssr
    if isinstance(policy, SMWPolicy):
        return _run_smw
    if isinstance(policy, MMAPolicy):
        return _run_mma
    return None


def _run_ssr(policy, inst, arrays, state, slots, burn_in, age_sums, sched, served, h):
    mu0, mu0_total = _mu0_arrays(policy.params.mu0, inst.lambdas)
    forced_off = np.zeros(len(inst.lambdas) + 1, dtype=np.int64)
    rest_off = np.zeros(len(inst.lambdas) + 1, dtype=np.int64)
    forced_ids: list[int] = []
    rest_ids: list[int] = []
    rest_probs: list[float] = []
    k_rest = np.zeros(len(inst.lambdas), dtype=np.int64)
    for ci, lam in enumerate(inst.lambdas):
        forced, rids, rprobs, kr = split_marginals(policy.params.marginals[lam])
        forced_off[ci + 1] = forced_off[ci] + len(forced)
        rest_off[ci + 1] = rest_off[ci] + len(rids)
        forced_ids.extend(forced)
        rest_ids.extend(rids)
        rest_probs.extend(rprobs)
        k_rest[ci] = kr
    return _kernels.ssr_kernel(
        state, slots, burn_in, inst.memory,
        arrays["users_off"], arrays["users_flat"], arrays["p"], arrays["q_req"],
        mu0, mu0_total,
        forced_off, np.array(forced_ids, dtype=np.int64),
        rest_off, np.array(rest_ids, dtype=np.int64),
        np.array(rest_probs, dtype=np.float64), k_rest,
        age_sums, sched, served, h,
    )


def _run_smw(policy, inst, arrays, state, slots, burn_in, age_sums, sched, served, h):
    mu0, mu0_total = _mu0_arrays(policy.params.mu0, inst.lambdas)
    denom = np.zeros(inst.n_requests, dtype=np.float64)
    for rid, dvalue in policy.params.weight_denoms.items():
        denom[rid] = dvalue
    return _kernels.smw_kernel(
        state, slots, burn_in, inst.memory,
        arrays["users_off"], arrays["users_flat"], arrays["p"], arrays["q_req"],
        mu0, mu0_total,
        arrays["class_off"], arrays["class_members"], arrays["m_budget"], denom,
        age_sums, sched, served, h,
    )


def _run_mma(policy, inst, arrays, state, slots, burn_in, age_sums, sched, served, h):
    phi = np.array(policy.params.phi, dtype=np.float64)
    phi_total = 0.0
    for prob in policy.params.phi:
        phi_total += prob
    lam_index = {lam: ci for ci, lam in enumerate(inst.lambdas)}
    sub_off = np.zeros(len(policy.params.subsets) + 1, dtype=np.int64)
    sub_class_idx: list[int] = []
    for i, subset in enumerate(policy.params.subsets):
        sub_off[i + 1] = sub_off[i] + len(subset)
        sub_class_idx.extend(lam_index[lam] for lam in subset)
    return _kernels.mma_kernel(
        state, slots, burn_in, inst.memory,
        arrays["users_off"], arrays["users_flat"], arrays["p"], arrays["q_req"],
        phi, phi_total,
        sub_off, np.array(sub_class_idx, dtype=np.int64),
        arrays["class_off"], arrays["class_members"],
        age_sums, sched, served, h,
    )
