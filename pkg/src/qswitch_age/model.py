"""Switch/network model: users, entanglement requests, and memory admissibility.

A switch with ``n_users`` users serves multipartite entanglement requests.
Each request names a distinct subset of at least two users; its cardinality
is the subset size.  Serving a request needs one memory register per user,
a successful link-level entanglement to every user (user ``i`` succeeds with
probability ``p_i``), and a successful swap (probability ``q_lambda`` for a
request of cardinality ``lambda``).  A set of requests fits in memory when
the sum of their cardinalities is at most the register budget ``M``.

User indices are 1-based everywhere in this module and in the JSON format;
request ids are 0-based positions in the canonical (cardinality, user-set)
ordering.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence


class ValidationError(ValueError):
    """A model object or configuration violates its invariants."""


@dataclass(frozen=True)
class NetworkConfig:
    """Star network: per-user link success probabilities and per-cardinality
    swap success probabilities.  All probabilities must lie in (0, 1]."""

    n_users: int
    p: tuple[float, ...]
    q: dict[int, float]

    def __post_init__(self) -> None:
        if self.n_users < 2:
            raise ValidationError(f"need at least 2 users, got {self.n_users}")
        if len(self.p) != self.n_users:
            raise ValidationError(
                f"expected {self.n_users} link probabilities, got {len(self.p)}"
            )
        for i, pi in enumerate(self.p, start=1):
            if not 0.0 < pi <= 1.0:
                raise ValidationError(f"p_{i}={pi} outside (0,1]")
        for lam, ql in self.q.items():
            if not 0.0 < ql <= 1.0:
                raise ValidationError(f"q_{lam}={ql} outside (0,1]")


@dataclass(frozen=True)
class Request:
    """One entanglement request: a strictly sorted tuple of user indices."""

    id: int
    users: tuple[int, ...]

    @property
    def cardinality(self) -> int:
        return len(self.users)


@dataclass(frozen=True)
class MemoryConfiguration:
    """A set of request ids scheduled in one slot, stored sorted ascending."""

    scheduled: tuple[int, ...]

    def __post_init__(self) -> None:
        if list(self.scheduled) != sorted(set(self.scheduled)):
            raise ValidationError(
                f"scheduled ids must be distinct and sorted: {self.scheduled}"
            )


@dataclass(frozen=True)
class Instance:
    """A network, a request set, and a memory budget, plus derived structure.

    ``classes`` maps each cardinality to the ascending ids of its requests,
    ``lambdas`` is the sorted tuple of distinct cardinalities, and
    ``per_class_budget`` holds ``M_lambda = min(|C(lambda)|, floor(M/lambda))``,
    the number of same-cardinality requests schedulable in one slot.
    """

    network: NetworkConfig
    requests: tuple[Request, ...]
    memory: int
    classes: dict[int, tuple[int, ...]] = field(compare=False)
    lambdas: tuple[int, ...] = field(compare=False)
    per_class_budget: dict[int, int] = field(compare=False)

    @classmethod
    def build(
        cls,
        network: NetworkConfig,
        requests: Sequence[Request],
        memory: int,
        check: bool = True,
    ) -> "Instance":
        classes: dict[int, list[int]] = {}
        for r in requests:
            classes.setdefault(r.cardinality, []).append(r.id)
        lambdas = tuple(sorted(classes))
        budgets = {
            lam: min(len(ids), memory // lam) for lam, ids in classes.items()
        }
        inst = cls(
            network=network,
            requests=tuple(requests),
            memory=memory,
            classes={lam: tuple(sorted(ids)) for lam, ids in classes.items()},
            lambdas=lambdas,
            per_class_budget=budgets,
        )
        if check:
            violations = validate_instance(inst)
            if violations:
                raise ValidationError("; ".join(violations))
        return inst

    @property
    def n_requests(self) -> int:
        return len(self.requests)


def build_request_set(
    n_users: int,
    mode: str = "all",
    max_cardinality: int | None = None,
    explicit: Sequence[Sequence[int]] | None = None,
) -> tuple[Request, ...]:
    """Construct a request set over ``n_users`` users.

    ``mode`` is one of:

    - ``"all"``: every user subset of size >= 2 (count 2^N - N - 1);
    - ``"up_to"``: every subset of size in [2, max_cardinality];
    - ``"explicit"``: exactly the given user lists.

    Ids are assigned by (cardinality, lexicographic user tuple), so the same
    inputs always produce the same ids.
    """
    if n_users < 2:
        raise ValidationError(f"need at least 2 users, got {n_users}")
    if mode == "all":
        k = n_users
    elif mode == "up_to":
        if max_cardinality is None or not 2 <= max_cardinality <= n_users:
            raise ValidationError(
                f"max_cardinality must be in [2, {n_users}], got {max_cardinality}"
            )
        k = max_cardinality
    elif mode == "explicit":
        if explicit is None:
            raise ValidationError("explicit mode needs a list of user sets")
        return _explicit_requests(n_users, explicit)
    else:
        raise ValidationError(f"unknown request-set mode {mode!r}")

    user_sets = []
    for lam in range(2, k + 1):
        user_sets.extend(itertools.combinations(range(1, n_users + 1), lam))
    return tuple(Request(id=i, users=us) for i, us in enumerate(user_sets))


def _explicit_requests(
    n_users: int, user_lists: Sequence[Sequence[int]]
) -> tuple[Request, ...]:
    seen = set()
    user_sets = []
    for us in user_lists:
        users = tuple(sorted(set(us)))
        if len(users) != len(us):
            raise ValidationError(f"duplicate user within request {list(us)}")
        if len(users) < 2:
            raise ValidationError(f"request {list(us)} has fewer than 2 users")
        if users[0] < 1 or users[-1] > n_users:
            raise ValidationError(f"request {list(us)} has users outside [1,{n_users}]")
        if users in seen:
            raise ValidationError(f"duplicate request {list(users)}")
        seen.add(users)
        user_sets.append(users)
    user_sets.sort(key=lambda us: (len(us), us))
    return tuple(Request(id=i, users=us) for i, us in enumerate(user_sets))


def service_success_prob(request: Request, network: NetworkConfig) -> float:
    """Probability that every user of the request establishes its link in a
    slot: the product of the users' p_i."""
    v = 1.0
    for u in request.users:
        if not 1 <= u <= network.n_users:
            raise ValidationError(f"user {u} outside [1,{network.n_users}]")
        v *= network.p[u - 1]
    return v


def per_class_budget(lam: int, inst: Instance) -> int:
    """Number of cardinality-``lam`` requests schedulable per slot,
    min(|C(lam)|, floor(M/lam))."""
    if lam not in inst.per_class_budget:
        raise LookupError(f"no requests of cardinality {lam} in this instance")
    return inst.per_class_budget[lam]


def is_admissible(config: MemoryConfiguration, inst: Instance) -> bool:
    """True when the scheduled requests are distinct and their total
    cardinality fits within the memory budget."""
    total = 0
    for rid in config.scheduled:
        if not 0 <= rid < inst.n_requests:
            raise LookupError(f"unknown request id {rid}")
        total += inst.requests[rid].cardinality
    return total <= inst.memory


def validate_instance(inst: Instance) -> list[str]:
    """Collect every violated invariant; an empty list means the instance is
    valid.  Emits a warning (not a violation) when the memory budget is so
    large that every request fits simultaneously."""
    violations: list[str] = []
    net = inst.network
    for i, pi in enumerate(net.p, start=1):
        if not 0.0 < pi <= 1.0:
            violations.append(f"probability p_{i}={pi} outside (0,1]")
    for lam, ql in net.q.items():
        if not 0.0 < ql <= 1.0:
            violations.append(f"probability q_{lam}={ql} outside (0,1]")

    if not inst.requests:
        violations.append("request set is empty")
    seen_users: set[tuple[int, ...]] = set()
    max_card = 0
    for idx, r in enumerate(inst.requests):
        if r.id != idx:
            violations.append(f"request id {r.id} at position {idx} (ids must be 0..R-1)")
        if len(r.users) < 2:
            violations.append(f"request {r.id} has fewer than 2 users")
        if tuple(sorted(set(r.users))) != r.users:
            violations.append(f"request {r.id} users not strictly sorted: {r.users}")
        elif r.users and (r.users[0] < 1 or r.users[-1] > net.n_users):
            violations.append(f"request {r.id} has users outside [1,{net.n_users}]")
        if r.users in seen_users:
            violations.append(f"duplicate request user set {r.users}")
        seen_users.add(r.users)
        max_card = max(max_card, r.cardinality)
        if r.cardinality not in net.q:
            violations.append(f"missing swap probability q_{r.cardinality}")

    if inst.requests and inst.memory < max_card:
        violations.append(
            f"memory below largest request ({inst.memory} < {max_card})"
        )
    if not violations and inst.requests:
        total = sum(r.cardinality for r in inst.requests)
        if total <= inst.memory:
            warnings.warn(
                "memory budget admits all requests at once; scheduling is trivial",
                stacklevel=2,
            )
    return violations


# ---------------------------------------------------------------------------
# JSON interchange
# ---------------------------------------------------------------------------

def instance_from_json(doc: Mapping) -> Instance:
    """Parse an instance from the documented JSON shape:

    ``{"n_users": N, "p": [...], "q": {"2": 0.92, ...}, "memory": M,
    "requests": [[1,2], ...] | {"mode": "all"} | {"mode": "up_to", "k": 3}}``
    """
    try:
        n_users = int(doc["n_users"])
        p = tuple(float(x) for x in doc["p"])
        q = {int(lam): float(x) for lam, x in doc["q"].items()}
        memory = int(doc["memory"])
        req_spec = doc["requests"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed instance document: {exc}") from exc
    network = NetworkConfig(n_users=n_users, p=p, q=q)
    if isinstance(req_spec, Mapping):
        mode = req_spec.get("mode")
        if mode == "all":
            requests = build_request_set(n_users, "all")
        elif mode == "up_to":
            requests = build_request_set(
                n_users, "up_to", max_cardinality=int(req_spec["k"])
            )
        else:
            raise ValidationError(f"unknown request mode {mode!r}")
    else:
        requests = build_request_set(n_users, "explicit", explicit=req_spec)
    return Instance.build(network, requests, memory)


def instance_to_json(inst: Instance) -> dict:
    """Serialize to the canonical JSON shape (explicit request lists)."""
    return {
        "n_users": inst.network.n_users,
        "p": list(inst.network.p),
        "q": {str(lam): ql for lam, ql in sorted(inst.network.q.items())},
        "memory": inst.memory,
        "requests": [list(r.users) for r in inst.requests],
    }
