"""
Maximum Nash welfare for divisible goods, computed as the equilibrium of a
Fisher market in which every agent has budget 1.

Floating point lives here and nowhere else: the solver works on numpy arrays
and ``mnw_allocate`` snaps its output back to exact rationals.
"""

import logging
from collections import deque
from enum import Enum
from fractions import Fraction
from typing import Optional, Union

import numpy as np
from pydantic import Field, field_validator, model_validator

from .errors import NoConvergenceError, PreconditionViolatedError
from .models import FractionalAllocation, FrozenModel, Instance
from .rational import Rational
from .valuations import validate_instance

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10**6
SNAP_DENOMINATOR = 10**6
SNAP_TOLERANCE = 1e-6
MBB_GAP = 1e-4
POLISH_ROUNDS = 5
POLISH_EVERY = 256


class EquilibriumResiduals(FrozenModel):
    """Violation magnitudes of the three equilibrium conditions."""

    clearing: float = Field(ge=0, description="max_g |sum_a x_ag - 1|")
    budget: float = Field(ge=0, description="max_a |p . x_a - 1|")
    mbb: float = Field(ge=0, description="max bang-per-buck shortfall over positive shares")

    @property
    def worst(self) -> float:
        return max(self.clearing, self.budget, self.mbb)


class MarketOutcome(FrozenModel):
    x: tuple[tuple[float, ...], ...] = Field(description="Real-valued allocation")
    p: tuple[float, ...] = Field(description="Prices")
    residuals: EquilibriumResiduals
    iters: int = Field(ge=0, description="Proportional-response rounds run")
    polished: bool = Field(default=False, description="Support polishing replaced the raw iterate")

    @field_validator("p")
    @classmethod
    def check_prices(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        if any(price < 0 for price in v):
            raise ValueError(f"Negative price in {v}")
        return v

    def allocation_array(self) -> np.ndarray:
        return np.array(self.x, dtype=float)

    def price_array(self) -> np.ndarray:
        return np.array(self.p, dtype=float)


class ZeroGoodKind(str, Enum):
    UNIFORM = "uniform"
    TO_AGENT = "to-agent"
    EXPLICIT = "explicit"


class ZeroGoodPolicy(FrozenModel):
    """
    Where goods that nobody values go.

    The equilibrium leaves such goods free, so any split maximizes Nash
    welfare; the policy picks one. Explicit shares name a column per good;
    unnamed zero goods fall back to the uniform split.
    """

    kind: ZeroGoodKind = ZeroGoodKind.UNIFORM
    agent: Optional[int] = None
    shares: dict[int, tuple[Rational, ...]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def check_policy(self) -> "ZeroGoodPolicy":
        if self.kind == ZeroGoodKind.TO_AGENT and (self.agent is None or self.agent < 0):
            raise ValueError("to-agent policy needs a non-negative agent")
        if self.kind != ZeroGoodKind.EXPLICIT and self.shares:
            raise ValueError("shares are only allowed with the explicit policy")
        for g, column in self.shares.items():
            if any(s < 0 for s in column) or sum(column, Fraction(0)) != 1:
                raise ValueError(f"Explicit column for good {g} must be non-negative and sum to 1")
        return self

    def column(self, good: int, n: int) -> tuple[Fraction, ...]:
        if self.kind == ZeroGoodKind.TO_AGENT:
            if self.agent >= n:
                raise ValueError(f"to-agent policy names agent {self.agent}, instance has {n}")
            return tuple(Fraction(int(a == self.agent)) for a in range(n))
        if self.kind == ZeroGoodKind.EXPLICIT and good in self.shares:
            column = self.shares[good]
            if len(column) != n:
                raise ValueError(f"Explicit column for good {good} has {len(column)} entries, expected {n}")
            return column
        return tuple(Fraction(1, n) for _ in range(n))


class SpendingReport(FrozenModel):
    decreased: tuple[int, ...] = Field(description="Goods whose price went down")
    spend_decreased_before: float
    spend_decreased_after: float
    spend_rest_before: float
    spend_rest_after: float
    decreased_holds: bool
    rest_holds: bool

    @property
    def holds(self) -> bool:
        return self.decreased_holds and self.rest_holds


def valuation_array(inst: Instance) -> np.ndarray:
    return np.array([[float(v) for v in row] for row in inst.valuations], dtype=float)


def _residuals(V: np.ndarray, x: np.ndarray, p: np.ndarray, tol: float) -> EquilibriumResiduals:
    clearing = float(np.max(np.abs(x.sum(axis=0) - 1.0)))
    budget = float(np.max(np.abs(x @ p - 1.0)))
    priced = p > 0
    mbb = 0.0
    if np.any(priced):
        bang = V[:, priced] / p[priced]
        alpha = bang.max(axis=1)
        holding = x[:, priced] > tol
        if np.any(holding):
            shortfall = (alpha[:, None] - bang)[holding]
            mbb = float(max(shortfall.max(), 0.0))
    # an agent holding a share of a valued good that carries no price is off its demand
    unpriced_valued = (~priced) & (V.max(axis=0) > 0)
    if np.any(unpriced_valued & (x > tol).any(axis=0)):
        mbb = float("inf")
    return EquilibriumResiduals(clearing=clearing, budget=budget, mbb=mbb)


def verify_equilibrium(
    inst: Instance,
    outcome: Union[MarketOutcome, tuple[np.ndarray, np.ndarray]],
    tol: float = DEFAULT_TOL,
) -> EquilibriumResiduals:
    """Residuals of market clearing, budget exhaustion and bang-per-buck optimality."""
    if isinstance(outcome, MarketOutcome):
        x, p = outcome.allocation_array(), outcome.price_array()
    else:
        x, p = (np.asarray(a, dtype=float) for a in outcome)
    V = valuation_array(inst)
    if x.shape != V.shape or p.shape != (inst.m,):
        raise ValueError(f"Outcome shapes {x.shape}/{p.shape} do not match instance {V.shape}")
    return _residuals(V, x, p, tol)


def _fill_unvalued(x: np.ndarray, valued: np.ndarray) -> np.ndarray:
    x = x.copy()
    x[:, ~valued] = 1.0 / x.shape[0]
    return x


def _polish(V: np.ndarray, b: np.ndarray, valued: np.ndarray) -> Optional[tuple[np.ndarray, np.ndarray]]:
    """
    Rebuild an exact-support equilibrium candidate from near-equilibrium bids.

    Prices are recomputed along a spanning forest of the bang-per-buck graph
    and scaled per component to the component's budget; spending is then
    projected onto that graph by least squares.
    """
    n, m = V.shape
    p = b.sum(axis=0)
    if np.any(p[valued] <= 0):
        return None
    bang = np.zeros_like(V)
    bang[:, valued] = V[:, valued] / p[valued]
    alpha = bang.max(axis=1)
    edges = (V > 0) & valued[None, :] & (bang >= alpha[:, None] * (1.0 - MBB_GAP))

    price = np.zeros(m)
    level = np.zeros(n)
    seen_agent = np.zeros(n, dtype=bool)
    seen_good = np.zeros(m, dtype=bool)
    for root in range(n):
        if seen_agent[root]:
            continue
        seen_agent[root] = True
        level[root] = 1.0
        agents, goods = [root], []
        queue = deque([("agent", root)])
        while queue:
            kind, node = queue.popleft()
            if kind == "agent":
                for g in np.flatnonzero(edges[node] & ~seen_good):
                    seen_good[g] = True
                    price[g] = V[node, g] / level[node]
                    goods.append(g)
                    queue.append(("good", g))
            else:
                for a in np.flatnonzero(edges[:, node] & ~seen_agent):
                    seen_agent[a] = True
                    level[a] = V[a, node] / price[node]
                    agents.append(a)
                    queue.append(("agent", a))
        if not goods:
            return None
        price[goods] *= len(agents) / price[goods].sum()
    if np.any(valued & ~seen_good):
        return None

    support = np.argwhere(edges)
    goods_idx = np.flatnonzero(valued)
    row_of_good = {g: n + i for i, g in enumerate(goods_idx)}
    A = np.zeros((n + len(goods_idx), len(support)))
    for e, (a, g) in enumerate(support):
        A[a, e] = 1.0
        A[row_of_good[g], e] = 1.0
    rhs = np.concatenate([np.ones(n), price[goods_idx]])
    spend = b[edges].astype(float)
    for _ in range(POLISH_ROUNDS):
        correction = np.linalg.lstsq(A, rhs - A @ spend, rcond=None)[0]
        spend = np.clip(spend + correction, 0.0, None)

    x = np.zeros((n, m))
    for (a, g), s in zip(support, spend):
        x[a, g] = s / price[g]
    return _fill_unvalued(x, valued), price


def proportional_response_solve(
    inst: Instance,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    polish: bool = True,
) -> MarketOutcome:
    """
    Fisher-market equilibrium with unit budgets by proportional-response bidding.

    Bids start at b_ag = v_a(g) / sum_h v_a(h). Each round prices are the bid
    sums, x = b / p, and every agent rebids b_ag = v_a(g) x_ag / v_a(x_a).
    Iteration stops once no price moves by more than ``tol`` relative, or
    earlier when the polished iterate already certifies an equilibrium with
    every residual at most ``tol``. Goods nobody values get price 0 and are
    split uniformly.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    validate_instance(inst, for_fisher=True)
    V = valuation_array(inst)
    valued = V.max(axis=0) > 0
    bids = V / V.sum(axis=1, keepdims=True)
    prices = bids.sum(axis=0)

    def raw_outcome(b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = b.sum(axis=0)
        x = np.divide(b, p, out=np.zeros_like(b), where=p > 0)
        return _fill_unvalued(x, valued), p

    def best_outcome(b: np.ndarray) -> tuple[np.ndarray, np.ndarray, EquilibriumResiduals, bool]:
        x, p = raw_outcome(b)
        res = _residuals(V, x, p, tol)
        if polish:
            candidate = _polish(V, b, valued)
            if candidate is not None:
                polished_res = _residuals(V, *candidate, tol)
                if polished_res.worst < res.worst:
                    return candidate[0], candidate[1], polished_res, True
        return x, p, res, False

    for it in range(1, max_iter + 1):
        # x = b / p, then everyone rebids in proportion to what each good gave them
        x = np.divide(bids, prices, out=np.zeros_like(bids), where=prices > 0)
        u = (V * x).sum(axis=1)
        bids = V * x / u[:, None]
        new_prices = bids.sum(axis=0)
        change = float(np.max(np.abs(new_prices[valued] - prices[valued]) / prices[valued]))
        prices = new_prices
        if change <= tol:
            x, p, res, polished = best_outcome(bids)
            logger.debug("Proportional response converged after %d rounds (change %.3g)", it, change)
            return _outcome(x, p, res, it, polished)
        # Tied markets crawl here (sublinear tail), so every few hundred rounds
        # try to read the exact equilibrium off the current support
        if polish and it % POLISH_EVERY == 0:
            x, p, res, polished = best_outcome(bids)
            if polished and res.worst <= tol:
                logger.debug("Polished iterate certified after %d rounds", it)
                return _outcome(x, p, res, it, polished)

    # Out of rounds: report the best we have, then give up
    x, p, res, _ = best_outcome(bids)
    logger.warning("Proportional response did not converge in %d rounds: %s", max_iter, res)
    raise NoConvergenceError(max_iter, res)


def _outcome(x: np.ndarray, p: np.ndarray, res: EquilibriumResiduals, iters: int, polished: bool) -> MarketOutcome:
    return MarketOutcome(
        x=tuple(tuple(float(v) for v in row) for row in x),
        p=tuple(float(v) for v in p),
        residuals=res,
        iters=iters,
        polished=polished,
    )


def _snap_column(column: np.ndarray, max_denominator: int) -> list[Fraction]:
    snapped = [
        min(max(Fraction(float(v)).limit_denominator(max_denominator), Fraction(0)), Fraction(1))
        for v in column
    ]
    # the largest entry takes the rounding so the column sums to exactly 1
    big = int(np.argmax(column))
    snapped[big] = Fraction(1) - sum((s for i, s in enumerate(snapped) if i != big), Fraction(0))
    drift = max(abs(float(s) - float(v)) for s, v in zip(snapped, column))
    if snapped[big] < 0 or drift > SNAP_TOLERANCE:
        raise PreconditionViolatedError(
            f"Snapping column {[float(v) for v in column]} would move a share by {drift:.3g} "
            f"(limit {SNAP_TOLERANCE:.0e}); the column is not a solved allocation"
        )
    return snapped


def rationalize_allocation(x: np.ndarray, max_denominator: int = SNAP_DENOMINATOR) -> FractionalAllocation:
    """
    Snap a real allocation to rationals with bounded denominators.

    The largest entry of each column absorbs the rounding so that every
    column sums to exactly 1.
    """
    x = np.asarray(x, dtype=float)
    columns = [_snap_column(x[:, g], max_denominator) for g in range(x.shape[1])]
    return FractionalAllocation(shares=[[columns[g][a] for g in range(x.shape[1])] for a in range(x.shape[0])])


def mnw_allocate(
    inst: Instance,
    zero_good_policy: Optional[ZeroGoodPolicy] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> FractionalAllocation:
    """Maximum Nash welfare allocation, snapped to exact rationals."""
    outcome = proportional_response_solve(inst, tol=tol, max_iter=max_iter)
    return mnw_from_outcome(inst, outcome, zero_good_policy)


def mnw_from_outcome(
    inst: Instance,
    outcome: MarketOutcome,
    zero_good_policy: Optional[ZeroGoodPolicy] = None,
) -> FractionalAllocation:
    """Snap an already solved market and apply the zero-good policy."""
    policy = zero_good_policy or ZeroGoodPolicy()
    snapped = rationalize_allocation(outcome.allocation_array())
    shares = [list(row) for row in snapped.shares]
    unvalued = [g for g in range(inst.m) if all(row[g] == 0 for row in inst.valuations)]
    for g in policy.shares:
        if g not in unvalued:
            logger.warning("Ignoring explicit shares for good %d: some agent values it", g)
    for g in unvalued:
        for a, share in enumerate(policy.column(g, inst.n)):
            shares[a][g] = share
    return FractionalAllocation(shares=shares)


def demand_bundle(inst: Instance, agent: int, p: np.ndarray) -> np.ndarray:
    """An optimal bundle: the budget split evenly over the agent's bang-per-buck goods."""
    V = valuation_array(inst)[agent]
    p = np.asarray(p, dtype=float)
    priced = p > 0
    bang = np.where(priced, V / np.where(priced, p, 1.0), 0.0)
    best = bang >= bang.max() * (1.0 - 1e-12)
    best &= priced & (V > 0)
    x = np.zeros(inst.m)
    x[best] = (1.0 / best.sum()) / p[best]
    return x


def spending_monotonicity_check(
    inst: Instance,
    agent: int,
    p: np.ndarray,
    p_new: np.ndarray,
    x: np.ndarray,
    x_new: np.ndarray,
    tol: float = 1e-9,
) -> SpendingReport:
    """
    When prices move from p to p_new, an agent spends no less on the goods
    that got cheaper and no more on the rest.

    Both bundles must be demand-optimal at their prices; otherwise
    PreconditionViolatedError is raised.
    """
    p, p_new = np.asarray(p, dtype=float), np.asarray(p_new, dtype=float)
    x, x_new = np.asarray(x, dtype=float), np.asarray(x_new, dtype=float)
    V = valuation_array(inst)[agent:agent + 1]
    for prices, bundle, label in ((p, x, "p"), (p_new, x_new, "p'")):
        res = _residuals(V, bundle[None, :], prices, tol)
        if res.mbb > tol:
            raise PreconditionViolatedError(
                f"Bundle for agent {agent} is not bang-per-buck optimal under {label} (residual {res.mbb:.3g})"
            )
    cheaper = p > p_new
    before_s = float(np.sum(x[cheaper] * p[cheaper]))
    after_s = float(np.sum(x_new[cheaper] * p_new[cheaper]))
    before_r = float(np.sum(x[~cheaper] * p[~cheaper]))
    after_r = float(np.sum(x_new[~cheaper] * p_new[~cheaper]))
    return SpendingReport(
        decreased=tuple(int(g) for g in np.flatnonzero(cheaper)),
        spend_decreased_before=before_s,
        spend_decreased_after=after_s,
        spend_rest_before=before_r,
        spend_rest_after=after_r,
        decreased_holds=before_s <= after_s + tol,
        rest_holds=after_r <= before_r + tol,
    )
