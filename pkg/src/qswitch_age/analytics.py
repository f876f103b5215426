"""Closed-form average-age evaluators and the independent renewal oracle.

The age of a request resets to 1 on service and climbs by 1 per slot
otherwise, so its long-run time average is the renewal-reward value
``(E[I^2] + E[I]) / (2 E[I])`` for the inter-service time ``I``.  Under the
randomized policy each request is served i.i.d. per slot, making ``I``
geometric; under the max-age policy the class cycles round-robin, making
``I`` a sum of independent geometrics (one per class member).  The closed
forms below are exact consequences of those two renewal structures, and
``renewal_oracle_ssr`` / ``renewal_oracle_mma`` recompute them from raw
geometric moments as an independent check.

Zero selection probabilities give genuinely infinite averages; reports mark
the affected requests explicitly instead of letting infinities flow silently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .model import Instance, ValidationError, service_success_prob
from .optimize import coverage_probabilities
from .policies import MMAParams, SSRParams

SOURCE_SSR_CLOSED_FORM = "ssr-closed-form"
SOURCE_MMA_CLOSED_FORM = "mma-closed-form"
SOURCE_RENEWAL_ORACLE = "renewal-oracle"
SOURCE_SIMULATION = "simulation"


@dataclass(frozen=True)
class AgeReport:
    """Per-request and overall average ages (slots), with provenance and the
    ids whose averages are infinite."""

    per_request: dict[int, float]
    overall: float
    source: str
    infinite: tuple[int, ...] = ()

    @property
    def finite(self) -> bool:
        return not self.infinite


def _report(per_request: dict[int, float], source: str) -> AgeReport:
    infinite = tuple(sorted(r for r, d in per_request.items() if math.isinf(d)))
    overall = sum(per_request.values()) / len(per_request)
    return AgeReport(
        per_request=per_request, overall=overall, source=source, infinite=infinite
    )


def ssr_average_age(params: SSRParams, inst: Instance) -> AgeReport:
    """Closed-form averages under the stationary randomized policy: request
    ``r`` of cardinality ``lam`` is served with per-slot probability
    ``mu0(lam) * marginal(r) * q_lam * v(r)``, so its average age is the
    reciprocal."""
    per_request: dict[int, float] = {}
    for lam in inst.lambdas:
        mu0 = params.mu0[lam]
        q = inst.network.q[lam]
        for rid, marginal in params.marginals[lam].items:
            v = service_success_prob(inst.requests[rid], inst.network)
            s = mu0 * marginal * q * v
            per_request[rid] = math.inf if s <= 0.0 else 1.0 / s
    return _report(per_request, SOURCE_SSR_CLOSED_FORM)


def mma_request_age(
    inst: Instance,
    subsets: Sequence[Sequence[int]],
    phi: Sequence[float],
    request_id: int,
) -> float:
    """Closed-form average age of one request under the max-age policy:
    ``(1/(2 theta q)) * (sum(1/v'^2)/beta + beta)`` over its class, with
    ``beta = sum(1/v')`` and ``theta`` the class coverage probability.
    Identical for every request of the same cardinality."""
    lam = inst.requests[request_id].cardinality
    theta = coverage_probabilities(subsets, phi).get(lam, 0.0)
    if theta <= 0.0:
        return math.inf
    q = inst.network.q[lam]
    beta = 0.0
    ssq = 0.0
    for rid in inst.classes[lam]:
        v = service_success_prob(inst.requests[rid], inst.network)
        beta += 1.0 / v
        ssq += 1.0 / (v * v)
    return (ssq / beta + beta) / (2.0 * theta * q)


def mma_age_report(params: MMAParams, inst: Instance) -> AgeReport:
    """Closed-form averages for every request under the max-age policy."""
    per_request = {
        r.id: mma_request_age(inst, params.subsets, params.phi, r.id)
        for r in inst.requests
    }
    return _report(per_request, SOURCE_MMA_CLOSED_FORM)


def renewal_oracle_ssr(s: float) -> float:
    """Average age for i.i.d. per-slot service with probability ``s``,
    computed from the geometric moments ``E[I] = 1/s`` and
    ``E[I^2] = (2 - s)/s^2`` (equals ``1/s`` after simplification)."""
    if not 0.0 <= s <= 1.0:
        raise ValidationError(f"service probability {s} outside [0,1]")
    if s == 0.0:
        return math.inf
    e1 = 1.0 / s
    e2 = (2.0 - s) / (s * s)
    return (e2 + e1) / (2.0 * e1)


def renewal_oracle_mma(success_probs: Sequence[float]) -> float:
    """Average age when the inter-service time is a sum of independent
    geometrics (one full round-robin cycle), from the summed moments."""
    if not success_probs:
        raise ValidationError("need at least one per-visit success probability")
    e1 = 0.0
    var = 0.0
    for s in success_probs:
        if not 0.0 < s <= 1.0:
            raise ValidationError(f"success probability {s} outside (0,1]")
        e1 += 1.0 / s
        var += (1.0 - s) / (s * s)
    e2 = var + e1 * e1
    return (e2 + e1) / (2.0 * e1)
