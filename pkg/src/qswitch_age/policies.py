"""Per-slot scheduling policies behind one interface.

Three families, all causal and all restricted to admissible memory
configurations:

- ``ssr``: sample a cardinality, then a fixed-size subset of its class with
  prescribed inclusion marginals (age-independent).
- ``smw``: sample a cardinality, then take the budgeted number of requests
  with the largest age/denominator weights.
- ``mma``: sample a maximal feasible cardinality subset, then take the
  oldest request of each included cardinality.

Ties are always broken toward the smallest request id so traces replay
deterministically.  Default parameters for each family are the optimized
ones computed in :mod:`qswitch_age.optimize`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Mapping

from .model import Instance, MemoryConfiguration, ValidationError
from .optimize import (
    enumerate_maximal_subsets,
    mma_weights,
    optimal_cardinality_dist,
    optimal_marginals,
    optimal_subset_dist,
)
from .sampling import (
    MARGINAL_SUM_TOL,
    MarginalVector,
    RngStream,
    sample_categorical,
    sample_without_replacement,
)

if TYPE_CHECKING:
    from .simulator import AgeState

POLICY_NAMES = ("ssr", "smw", "mma")


def _check_mu0(mu0: Mapping[int, float], inst: Instance) -> None:
    if set(mu0) != set(inst.lambdas):
        raise ValidationError(
            f"cardinality distribution keys {sorted(mu0)} do not match "
            f"instance cardinalities {list(inst.lambdas)}"
        )
    total = 0.0
    for lam, prob in mu0.items():
        if prob < 0.0:
            raise ValidationError(f"negative probability for cardinality {lam}")
        total += prob
    if abs(total - 1.0) > MARGINAL_SUM_TOL:
        raise ValidationError(f"cardinality distribution sums to {total!r}")


@dataclass(frozen=True)
class SSRParams:
    """Cardinality distribution plus per-class inclusion marginals."""

    mu0: dict[int, float]
    marginals: dict[int, MarginalVector]

    def validate(self, inst: Instance) -> None:
        _check_mu0(self.mu0, inst)
        for lam in inst.lambdas:
            if lam not in self.marginals:
                raise ValidationError(f"missing marginals for cardinality {lam}")
            mv = self.marginals[lam]
            if tuple(rid for rid, _ in mv.items) != inst.classes[lam]:
                raise ValidationError(
                    f"marginals for cardinality {lam} must cover exactly its "
                    "class, ascending by id"
                )
            if mv.k != inst.per_class_budget[lam]:
                raise ValidationError(
                    f"marginals for cardinality {lam} target {mv.k} requests, "
                    f"budget is {inst.per_class_budget[lam]}"
                )


@dataclass(frozen=True)
class SMWParams:
    """Cardinality distribution plus strictly positive weight denominators."""

    mu0: dict[int, float]
    weight_denoms: dict[int, float]

    def validate(self, inst: Instance) -> None:
        _check_mu0(self.mu0, inst)
        for r in inst.requests:
            denom = self.weight_denoms.get(r.id)
            if denom is None or denom <= 0.0:
                raise ValidationError(
                    f"weight denominator for request {r.id} must be positive, "
                    f"got {denom}"
                )


@dataclass(frozen=True)
class MMAParams:
    """Distinct maximal feasible cardinality subsets and their distribution."""

    subsets: tuple[tuple[int, ...], ...]
    phi: tuple[float, ...]

    def validate(self, inst: Instance) -> None:
        if len(self.subsets) != len(self.phi):
            raise ValidationError("one probability per subset required")
        if len(set(self.subsets)) != len(self.subsets):
            raise ValidationError("duplicate cardinality subsets")
        total = 0.0
        for prob in self.phi:
            if prob < 0.0:
                raise ValidationError("negative subset probability")
            total += prob
        if abs(total - 1.0) > MARGINAL_SUM_TOL:
            raise ValidationError(f"subset distribution sums to {total!r}")
        for subset in self.subsets:
            if tuple(sorted(set(subset))) != subset:
                raise ValidationError(f"subset {subset} must be strictly sorted")
            used = 0
            for lam in subset:
                if lam not in inst.classes:
                    raise ValidationError(
                        f"subset {subset} names cardinality {lam} with no requests"
                    )
                used += lam
            if used > inst.memory:
                raise ValidationError(f"subset {subset} exceeds memory {inst.memory}")
            for lam in inst.lambdas:
                if lam not in subset and used + lam <= inst.memory:
                    raise ValidationError(
                        f"subset {subset} is not maximal: {lam} still fits"
                    )


class Policy:
    """Interface: ``decide`` maps the current ages to an admissible memory
    configuration, consuming randomness only from the given stream."""

    name: str

    def decide(
        self, inst: Instance, age: "AgeState", rng: RngStream
    ) -> MemoryConfiguration:
        raise NotImplementedError


class SSRPolicy(Policy):
    name = "ssr"

    def __init__(self, inst: Instance, params: SSRParams | None = None):
        self.params = params if params is not None else optimal_ssr_params(inst)
        self.params.validate(inst)

    def decide(self, inst, age, rng):
        weights = [self.params.mu0[lam] for lam in inst.lambdas]
        lam = inst.lambdas[sample_categorical(weights, rng)]
        chosen = sample_without_replacement(self.params.marginals[lam], rng)
        return MemoryConfiguration(scheduled=chosen)


class SMWPolicy(Policy):
    name = "smw"

    def __init__(self, inst: Instance, params: SMWParams | None = None):
        self.params = params if params is not None else optimal_smw_params(inst)
        self.params.validate(inst)

    def decide(self, inst, age, rng):
        weights = [self.params.mu0[lam] for lam in inst.lambdas]
        lam = inst.lambdas[sample_categorical(weights, rng)]
        members = inst.classes[lam]
        m = inst.per_class_budget[lam]
        denoms = self.params.weight_denoms
        ranked = sorted(members, key=lambda r: (-(age.h[r] / denoms[r]), r))
        return MemoryConfiguration(scheduled=tuple(sorted(ranked[:m])))


class MMAPolicy(Policy):
    name = "mma"

    def __init__(self, inst: Instance, params: MMAParams | None = None):
        self.params = params if params is not None else optimal_mma_params(inst)
        self.params.validate(inst)

    def decide(self, inst, age, rng):
        j = sample_categorical(self.params.phi, rng)
        chosen = []
        for lam in self.params.subsets[j]:
            members = inst.classes[lam]
            best = members[0]
            for rid in members[1:]:
                if age.h[rid] > age.h[best]:
                    best = rid
            chosen.append(best)
        return MemoryConfiguration(scheduled=tuple(sorted(chosen)))


def optimal_ssr_params(inst: Instance) -> SSRParams:
    """Marginals from the water-filling search and the matching closed-form
    cardinality distribution."""
    marginals = {lam: optimal_marginals(inst, lam) for lam in inst.lambdas}
    mu0 = optimal_cardinality_dist(inst, marginals)
    return SSRParams(mu0=mu0, marginals=marginals)


def optimal_smw_params(inst: Instance) -> SMWParams:
    """Same cardinality distribution as the optimal randomized policy; the
    optimal marginals become the weight denominators."""
    marginals = {lam: optimal_marginals(inst, lam) for lam in inst.lambdas}
    mu0 = optimal_cardinality_dist(inst, marginals)
    denoms = {
        rid: prob for mv in marginals.values() for rid, prob in mv.items
    }
    return SMWParams(mu0=mu0, weight_denoms=denoms)


def optimal_mma_params(inst: Instance) -> MMAParams:
    """All maximal feasible cardinality subsets with the convex-optimal
    sampling distribution."""
    subsets = enumerate_maximal_subsets(inst.lambdas, inst.memory)
    phi = optimal_subset_dist(subsets, mma_weights(inst))
    return MMAParams(subsets=subsets, phi=tuple(float(x) for x in phi))


def make_policy(
    name: str,
    inst: Instance,
    params: SSRParams | SMWParams | MMAParams | None = None,
) -> Policy:
    if name == "ssr":
        return SSRPolicy(inst, params)
    if name == "smw":
        return SMWPolicy(inst, params)
    if name == "mma":
        return MMAPolicy(inst, params)
    raise ValidationError(f"unknown policy {name!r}; expected one of {POLICY_NAMES}")
