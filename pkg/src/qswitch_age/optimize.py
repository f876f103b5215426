"""Optimal policy parameters: the capped-marginal water-filling search, the
closed-form cardinality distribution, maximal-cardinality-subset enumeration,
and the convex subset-distribution solver.

The marginal search finds gamma such that the capped mass
``sum_r min(1, 1/sqrt(v_r * gamma))`` equals the per-class schedule budget;
the mass is continuous and nonincreasing in gamma, so bisection between the
exact bracket endpoints converges deterministically.

The subset-distribution problem minimizes ``sum_lam w_lam / theta_lam`` over
the probability simplex, where ``theta_lam`` is the total probability of the
subsets containing ``lam``.  It is smooth and convex wherever every needed
``theta`` is positive; we solve it by projected gradient descent with a
backtracking (majorization) line search from the uniform distribution, which
covers every cardinality by construction.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .model import Instance, ValidationError, service_success_prob
from .sampling import MarginalVector


class SolverError(RuntimeError):
    """An iterative solver failed to reach its tolerance."""


_MAX_LAMBDA_SET = 16  # exhaustive 2^|set| enumeration guard


@dataclass(frozen=True)
class GammaResult:
    gamma: float
    residual: float
    iterations: int


def capped_mass(gamma: float, v_values: Sequence[float]) -> float:
    """``sum_r min(1, 1/sqrt(v_r * gamma))``, the total marginal mass the
    water-filling level ``gamma`` allocates."""
    total = 0.0
    for v in v_values:
        total += min(1.0, 1.0 / math.sqrt(v * gamma))
    return total


def gamma_search(
    v_values: Sequence[float], m: int, tol: float = 1e-10
) -> GammaResult:
    """Find gamma with ``capped_mass(gamma) == m`` to within ``tol``.

    Requires ``1 <= m < len(v_values)``; the saturated case
    ``m == len(v_values)`` has the all-ones solution and must be handled by
    the caller.
    """
    n = len(v_values)
    for v in v_values:
        if not 0.0 < v <= 1.0:
            raise ValidationError(f"success probability {v} outside (0,1]")
    if not 1 <= m < n:
        raise ValidationError(
            f"budget m={m} must be in [1, {n - 1}]; the m == |class| case "
            "takes the all-ones marginals"
        )
    lo = min(1.0 / v for v in v_values)
    evals = 1  # capped_mass(lo) == n by construction
    hi = lo
    while capped_mass(hi, v_values) > m:
        hi *= 2.0
        evals += 1
        if evals > 200:
            raise SolverError("no upper bracket for the marginal mass search")
    best_gamma = hi
    best_res = abs(capped_mass(hi, v_values) - m)
    for _ in range(200):
        # drive the bracket to fp resolution: the mass curve can be shallow,
        # so a small residual alone does not pin gamma tightly
        if best_res <= tol and hi - lo <= 1e-12 * hi:
            break
        mid = 0.5 * (lo + hi)
        g = capped_mass(mid, v_values)
        evals += 1
        res = abs(g - m)
        if res < best_res:
            best_res = res
            best_gamma = mid
        if g > m:
            lo = mid
        else:
            hi = mid
    if best_res > tol:
        raise SolverError(
            f"marginal mass search stalled: residual {best_res} > tol {tol}"
        )
    return GammaResult(gamma=best_gamma, residual=best_res, iterations=evals)


def optimal_marginals(
    inst: Instance, lam: int, tol: float = 1e-10
) -> MarginalVector:
    """Age-optimal inclusion marginals for the cardinality-``lam`` class:
    ``min(1, 1/sqrt(gamma * v_r))`` with gamma from :func:`gamma_search`, or
    all ones when the whole class fits the per-slot budget."""
    if lam not in inst.classes:
        raise LookupError(f"no requests of cardinality {lam}")
    members = inst.classes[lam]
    m = inst.per_class_budget[lam]
    if m == len(members):
        items = tuple((rid, 1.0) for rid in members)
        return MarginalVector(items=items, k=m)
    v = [service_success_prob(inst.requests[rid], inst.network) for rid in members]
    gamma = gamma_search(v, m, tol=tol).gamma
    items = tuple(
        (rid, min(1.0, 1.0 / math.sqrt(gamma * vr))) for rid, vr in zip(members, v)
    )
    return MarginalVector(items=items, k=m)


def optimal_cardinality_dist(
    inst: Instance, marginals: Mapping[int, MarginalVector]
) -> dict[int, float]:
    """Cardinality-selection probabilities proportional to
    ``sqrt(f_lam / q_lam)`` with ``f_lam = sum_r 1/(marginal_r * v_r)``."""
    scores: dict[int, float] = {}
    for lam in inst.lambdas:
        mv = marginals[lam]
        f = 0.0
        for rid, prob in mv.items:
            if prob <= 0.0:
                raise ValidationError(
                    f"marginal of request {rid} is zero; its age diverges"
                )
            v = service_success_prob(inst.requests[rid], inst.network)
            f += 1.0 / (prob * v)
        scores[lam] = math.sqrt(f / inst.network.q[lam])
    total = sum(scores.values())
    return {lam: s / total for lam, s in scores.items()}


def enumerate_maximal_subsets(
    lambdas: Sequence[int], memory: int
) -> tuple[tuple[int, ...], ...]:
    """All subsets of the cardinalities whose sum fits in memory and to which
    no further cardinality can be added, in lexicographic order."""
    lams = sorted(set(lambdas))
    if len(lams) > _MAX_LAMBDA_SET:
        raise ValidationError(
            f"{len(lams)} distinct cardinalities exceed the exhaustive "
            f"enumeration guard ({_MAX_LAMBDA_SET})"
        )
    for lam in lams:
        if lam > memory:
            raise ValidationError(f"cardinality {lam} exceeds memory {memory}")
    maximal = []
    for size in range(1, len(lams) + 1):
        for subset in itertools.combinations(lams, size):
            total = sum(subset)
            if total > memory:
                continue
            others = [lam for lam in lams if lam not in subset]
            if all(total + lam > memory for lam in others):
                maximal.append(subset)
    maximal.sort()
    return tuple(maximal)


def mma_weights(inst: Instance) -> dict[int, float]:
    """Per-cardinality weights ``(|C|/2q) * (sum(1/v^2)/beta + beta)`` with
    ``beta = sum(1/v)``; the coefficients of the subset-distribution
    objective."""
    weights: dict[int, float] = {}
    for lam in inst.lambdas:
        members = inst.classes[lam]
        beta = 0.0
        ssq = 0.0
        for rid in members:
            v = service_success_prob(inst.requests[rid], inst.network)
            beta += 1.0 / v
            ssq += 1.0 / (v * v)
        q = inst.network.q[lam]
        weights[lam] = (len(members) / (2.0 * q)) * (ssq / beta + beta)
    return weights


def coverage_probabilities(
    subsets: Sequence[Sequence[int]], phi: Sequence[float]
) -> dict[int, float]:
    """theta_lam: total probability of the subsets containing each
    cardinality."""
    thetas: dict[int, float] = {}
    for subset, prob in zip(subsets, phi):
        for lam in subset:
            thetas[lam] = thetas.get(lam, 0.0) + prob
    return thetas


def project_to_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(y)[::-1]
    css = np.cumsum(u)
    j = np.arange(1, y.size + 1)
    rho = np.max(np.nonzero(u + (1.0 - css) / j > 0)[0])
    lam = (1.0 - css[rho]) / (rho + 1.0)
    return np.maximum(y + lam, 0.0)


def optimal_subset_dist(
    subsets: Sequence[Sequence[int]],
    weights: Mapping[int, float],
    tol: float = 1e-8,
    max_iters: int = 100_000,
) -> np.ndarray:
    """Distribution over the given subsets minimizing
    ``sum_lam weights[lam] / theta_lam`` on the simplex.

    Projected gradient descent with backtracking, refined each iteration by
    a multiplicative rebalance candidate ``x * sqrt(-grad)`` (renormalized,
    exact for disjoint subsets), and finished by Newton steps on the
    identified support: once near the optimum the objective differences fall
    below float64 resolution, so only the gradient-based stationarity
    residual (gradient spread on the support, one-sided off the support,
    normalized by the multiplier scale) can certify the ``tol`` target.
    """
    n = len(subsets)
    if n == 0:
        raise ValidationError("no subsets to distribute over")
    lams = sorted({lam for s in subsets for lam in s})
    w = np.array([weights.get(lam, 0.0) for lam in lams])
    if np.any(w < 0.0):
        raise ValidationError("negative subset weights")
    for lam, wl in weights.items():
        if wl > 0.0 and not any(lam in s for s in subsets):
            raise ValidationError(f"cardinality {lam} not covered by any subset")
    if n == 1:
        return np.ones(1)
    cover = np.zeros((len(lams), n))
    for i, subset in enumerate(subsets):
        for lam in subset:
            cover[lams.index(lam), i] = 1.0

    def objective(x: np.ndarray) -> float:
        theta = cover @ x
        if np.any(theta[w > 0.0] <= 0.0):
            return math.inf
        with np.errstate(divide="ignore"):
            terms = np.where(w > 0.0, w / np.where(theta > 0.0, theta, 1.0), 0.0)
        return float(np.sum(terms))

    def gradient(x: np.ndarray) -> np.ndarray:
        theta = cover @ x
        safe = np.where(theta > 0.0, theta, 1.0)
        coef = np.where(w > 0.0, w / (safe * safe), 0.0)
        return -(cover.T @ coef)

    def residual_of(x: np.ndarray) -> float:
        g = gradient(x)
        mu_hat = float(x @ g)
        scale = max(1.0, abs(mu_hat))
        active = x > 0.0
        r_active = float(np.max(np.abs(g[active] - mu_hat)))
        r_inactive = 0.0
        if np.any(~active):
            r_inactive = max(0.0, float(np.max(mu_hat - g[~active])))
        return max(r_active, r_inactive) / scale

    def newton_polish(x: np.ndarray) -> np.ndarray | None:
        support = x > 0.0
        a = cover[:, support]
        z = x[support].copy()
        ns = z.size
        bordered = np.zeros((ns + 1, ns + 1))
        bordered[ns, :ns] = 1.0
        bordered[:ns, ns] = 1.0
        rhs = np.zeros(ns + 1)
        for _ in range(50):
            theta = a @ z
            if np.any(theta[w > 0.0] <= 0.0):
                return None
            safe = np.where(theta > 0.0, theta, 1.0)
            coef = np.where(w > 0.0, w / (safe * safe), 0.0)
            g = -(a.T @ coef)
            curve = np.where(w > 0.0, 2.0 * w / (safe ** 3), 0.0)
            bordered[:ns, :ns] = (a.T * curve) @ a
            rhs[:ns] = -g
            try:
                sol = np.linalg.solve(bordered, rhs)
            except np.linalg.LinAlgError:
                return None
            dz = sol[:ns]
            move = float(np.max(np.abs(dz)))
            if move == 0.0:
                break
            t = 1.0
            while np.any(z + t * dz <= 0.0):
                t *= 0.5
                if t < 1e-12:
                    return None
            z = z + t * dz
            if move * t < 1e-15:
                break
        z /= z.sum()
        out = np.zeros_like(x)
        out[support] = z
        return out

    x = np.full(n, 1.0 / n)
    fx = objective(x)
    step = 1.0
    stalled = 0
    residual = math.inf
    for _ in range(max_iters):
        g = gradient(x)
        mu_hat = float(x @ g)
        scale = max(1.0, abs(mu_hat))
        active = x > 0.0
        r_active = float(np.max(np.abs(g[active] - mu_hat)))
        r_inactive = 0.0
        if np.any(~active):
            r_inactive = max(0.0, float(np.max(mu_hat - g[~active])))
        residual = max(r_active, r_inactive) / scale
        if residual <= tol:
            return x
        if residual < 1e-4 or stalled >= 8:
            polished = newton_polish(x)
            if polished is not None and residual_of(polished) <= tol:
                return polished
        while True:
            x1 = project_to_simplex(x - step * g)
            f1 = objective(x1)
            dx = x1 - x
            ok = f1 <= fx + float(g @ dx) + float(dx @ dx) / (2.0 * step)
            if ok or step < 1e-18:
                break
            step *= 0.5
        x2 = x * np.sqrt(np.maximum(-g, 0.0))
        total = float(x2.sum())
        f2 = objective(x2 / total) if total > 0.0 else math.inf
        if f2 < f1:
            xn, fn = x2 / total, f2
        else:
            xn, fn = x1, f1
            step *= 2.0
        if fn < fx:
            x, fx = xn, fn
            stalled = 0
        else:
            step *= 0.25
            stalled += 1
            if stalled > 64:
                raise SolverError(
                    "subset-distribution solver stalled at residual "
                    f"{residual} (tolerance {tol})"
                )
    raise SolverError(
        f"subset-distribution solver hit the {max_iters}-iteration cap at "
        f"residual {residual} (tolerance {tol})"
    )
