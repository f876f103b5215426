import itertools

import numpy as np
import pytest

from qswitch_age import (
    Instance,
    NetworkConfig,
    ValidationError,
    build_request_set,
    is_admissible,
    make_policy,
    simulate,
)
from qswitch_age.policies import MMAParams, MMAPolicy, SMWParams, SMWPolicy, SSRParams, SSRPolicy
from qswitch_age.sampling import MarginalVector, RngStream
from qswitch_age.simulator import AgeState


def _ages(inst, values):
    age = AgeState.fresh(inst)
    age.h[:] = values
    return age


# ---------------------------------------------------------------------------
# randomized policy
# ---------------------------------------------------------------------------

def test_ssr_degenerate_class_schedules_only_request():
    net = NetworkConfig(n_users=2, p=(0.9, 0.9), q={2: 0.9})
    inst = Instance.build(net, build_request_set(2, "all"), 2, check=False)
    policy = make_policy("ssr", inst)
    rng = RngStream(0, 0)
    for _ in range(20):
        assert policy.decide(inst, AgeState.fresh(inst), rng).scheduled == (0,)


def test_ssr_small_memory_shapes(bench5):
    # with 5 registers: either two bipartite requests or one bigger request
    inst = bench5(5)
    policy = make_policy("ssr", inst)
    rng = RngStream(8, 0)
    age = AgeState.fresh(inst)
    seen_pair = seen_single = False
    for _ in range(500):
        x = policy.decide(inst, age, rng)
        cards = [inst.requests[r].cardinality for r in x.scheduled]
        if cards == [2, 2]:
            seen_pair = True
        else:
            assert len(cards) == 1 and cards[0] >= 3
            seen_single = True
    assert seen_pair and seen_single


def test_ssr_degenerate_mu0_fixed_class(bench5):
    inst = bench5(7)  # M_3 = 2
    marginals = {
        lam: MarginalVector(
            items=tuple(
                (rid, inst.per_class_budget[lam] / len(inst.classes[lam]))
                for rid in inst.classes[lam]
            ),
            k=inst.per_class_budget[lam],
        )
        for lam in inst.lambdas
    }
    params = SSRParams(
        mu0={2: 0.0, 3: 1.0, 4: 0.0, 5: 0.0},
        marginals=marginals,
    )
    policy = SSRPolicy(inst, params)
    rng = RngStream(5, 0)
    for _ in range(100):
        x = policy.decide(inst, AgeState.fresh(inst), rng)
        assert len(x.scheduled) == 2
        assert all(inst.requests[r].cardinality == 3 for r in x.scheduled)


def test_ssr_ignores_age_state(bench5):
    inst = bench5(5)
    policy = make_policy("ssr", inst)
    young = policy.decide(inst, _ages(inst, 1), RngStream(3, 0))
    old = policy.decide(inst, _ages(inst, 10_000), RngStream(3, 0))
    assert young == old


# ---------------------------------------------------------------------------
# max-weight policy
# ---------------------------------------------------------------------------

def test_smw_tie_break_smallest_ids():
    net = NetworkConfig(n_users=6, p=(0.9,) * 6, q={2: 0.9})
    requests = build_request_set(6, "explicit", explicit=[[1, 2], [3, 4], [5, 6]])
    inst = Instance.build(net, requests, 4, check=False)  # schedule 2 of 3
    params = SMWParams(mu0={2: 1.0}, weight_denoms={0: 0.5, 1: 0.5, 2: 0.5})
    policy = SMWPolicy(inst, params)
    x = policy.decide(inst, _ages(inst, 1), RngStream(0, 0))
    assert x.scheduled == (0, 1)


def test_smw_prefers_largest_age():
    net = NetworkConfig(n_users=6, p=(0.9,) * 6, q={2: 0.9})
    requests = build_request_set(6, "explicit", explicit=[[1, 2], [3, 4], [5, 6]])
    inst = Instance.build(net, requests, 2, check=False)
    params = SMWParams(mu0={2: 1.0}, weight_denoms={0: 1.0, 1: 1.0, 2: 1.0})
    policy = SMWPolicy(inst, params)
    x = policy.decide(inst, _ages(inst, (1, 10, 1)), RngStream(0, 0))
    assert x.scheduled == (1,)


def test_smw_weights_divide_by_denominator():
    net = NetworkConfig(n_users=4, p=(0.9,) * 4, q={2: 0.9})
    requests = build_request_set(4, "explicit", explicit=[[1, 2], [3, 4]])
    inst = Instance.build(net, requests, 2, check=False)
    params = SMWParams(mu0={2: 1.0}, weight_denoms={0: 0.4, 1: 1.0})
    policy = SMWPolicy(inst, params)
    # weights: 4/0.4 = 10 vs 5/1.0 = 5
    x = policy.decide(inst, _ages(inst, (4, 5)), RngStream(0, 0))
    assert x.scheduled == (0,)


def test_smw_matches_brute_force_subset(bench7):
    inst = bench7(2, memory=8)  # class of 21, pick 4
    rng = np.random.default_rng(12)
    members = inst.classes[2][:12]  # brute force stays small
    small = Instance.build(
        inst.network,
        build_request_set(
            7, "explicit",
            explicit=[list(inst.requests[r].users) for r in members],
        ),
        8,
        check=False,
    )
    small_policy = make_policy("smw", small)
    m = small.per_class_budget[2]
    for _ in range(25):
        ages = _ages(small, rng.integers(1, 500, size=small.n_requests))
        x = small_policy.decide(small, ages, RngStream(0, 0))
        got = sum(
            ages.h[r] / small_policy.params.weight_denoms[r] for r in x.scheduled
        )
        best = max(
            sum(ages.h[r] / small_policy.params.weight_denoms[r] for r in combo)
            for combo in itertools.combinations(range(small.n_requests), m)
        )
        assert got == pytest.approx(best, rel=1e-12)


def test_smw_rejects_zero_denominator(bench5):
    inst = bench5(5)
    denoms = {r.id: 1.0 for r in inst.requests}
    denoms[3] = 0.0
    params = SMWParams(
        mu0={lam: 0.25 for lam in inst.lambdas}, weight_denoms=denoms
    )
    with pytest.raises(ValidationError, match="denominator"):
        SMWPolicy(inst, params)


# ---------------------------------------------------------------------------
# max-age policy
# ---------------------------------------------------------------------------

def test_mma_picks_oldest_of_class():
    net = NetworkConfig(n_users=6, p=(0.9,) * 6, q={2: 0.9})
    requests = build_request_set(6, "explicit", explicit=[[1, 2], [3, 4], [5, 6]])
    inst = Instance.build(net, requests, 2, check=False)
    policy = MMAPolicy(inst, MMAParams(subsets=((2,),), phi=(1.0,)))
    x = policy.decide(inst, _ages(inst, (3, 7, 5)), RngStream(0, 0))
    assert x.scheduled == (1,)


def test_mma_bipartite_only_schedules_one(bench7):
    inst = bench7(2, memory=20)
    policy = make_policy("mma", inst)
    rng = RngStream(1, 0)
    age = _ages(inst, np.arange(1, inst.n_requests + 1))
    for _ in range(50):
        assert len(policy.decide(inst, age, rng).scheduled) == 1


def test_mma_mixed_subset_fills_memory(bench5):
    inst = bench5(5)
    policy = MMAPolicy(
        inst, MMAParams(subsets=((2, 3), (4,), (5,)), phi=(1.0, 0.0, 0.0))
    )
    x = policy.decide(inst, _ages(inst, 1), RngStream(0, 0))
    cards = sorted(inst.requests[r].cardinality for r in x.scheduled)
    assert cards == [2, 3]
    assert sum(cards) == inst.memory


def test_mma_tie_break_smallest_id(bench5):
    inst = bench5(5)
    policy = MMAPolicy(
        inst, MMAParams(subsets=((2, 3), (4,), (5,)), phi=(1.0, 0.0, 0.0))
    )
    x = policy.decide(inst, _ages(inst, 1), RngStream(0, 0))
    assert x.scheduled == (inst.classes[2][0], inst.classes[3][0])


def test_mma_rejects_non_maximal_subset(bench5):
    inst = bench5(5)
    with pytest.raises(ValidationError, match="not maximal"):
        MMAPolicy(inst, MMAParams(subsets=((2,),), phi=(1.0,)))
    with pytest.raises(ValidationError, match="exceeds memory"):
        MMAPolicy(inst, MMAParams(subsets=((2, 3, 4),), phi=(1.0,)))
    with pytest.raises(ValidationError, match="no requests"):
        MMAPolicy(inst, MMAParams(subsets=((2, 6),), phi=(1.0,)))


def test_unknown_policy_name(bench5):
    with pytest.raises(ValidationError):
        make_policy("foo", bench5(5))


# ---------------------------------------------------------------------------
# cross-cutting properties
# ---------------------------------------------------------------------------

def test_every_policy_emits_admissible_configs(bench5):
    inst = bench5(6)
    rng = np.random.default_rng(3)
    for name in ("ssr", "smw", "mma"):
        policy = make_policy(name, inst)
        stream = RngStream(77, 0)
        age = AgeState.fresh(inst)
        for _ in range(300):
            age.h[:] = rng.integers(1, 1000, size=inst.n_requests)
            assert is_admissible(policy.decide(inst, age, stream), inst)


def test_ssr_empirical_scheduling_frequency(bench5):
    # long-run per-request scheduling frequency equals mu0 * marginal
    inst = bench5(5)
    policy = make_policy("ssr", inst)
    slots = 1_000_000
    result = simulate(policy, inst, slots, 0, RngStream(2025, 0))
    for lam in inst.lambdas:
        for rid, marginal in policy.params.marginals[lam].items:
            target = policy.params.mu0[lam] * marginal
            sigma = np.sqrt(target * (1 - target) / slots)
            freq = result.scheduled_counts[rid] / slots
            assert abs(freq - target) < 3 * sigma


def test_mma_round_robin_within_class(bench5):
    inst = bench5(5)
    policy = make_policy("mma", inst)
    result = simulate(
        policy, inst, 4000, 0, RngStream(11, 0), engine="python", trace=True
    )
    services = {rid: [] for rid in range(inst.n_requests)}
    for t, outcome in enumerate(result.trace, start=1):
        for rid in np.nonzero(outcome.d)[0]:
            services[int(rid)].append(t)
    for lam in inst.lambdas:
        members = set(inst.classes[lam])
        # start checking once every member has been served at least once
        firsts = [services[r][0] for r in members if services[r]]
        if len(firsts) < len(members):
            continue
        cycle_start = max(firsts)
        for rid in members:
            times = [t for t in services[rid] if t >= cycle_start]
            for t1, t2 in zip(times, times[1:]):
                for other in members - {rid}:
                    inside = sum(1 for t in services[other] if t1 < t < t2)
                    assert inside == 1
