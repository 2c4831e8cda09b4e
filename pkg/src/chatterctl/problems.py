"""Built-in benchmark problems and their validation oracles.

Two problems ship with the solver:

* a scalar linear-quadratic regulator with a closed-form optimum, used to
  validate the whole pipeline against an independent oracle, and
* a grocer's scheduling problem: five perishable items, fourteen suppliers
  and three ranked customers, with market and inventory conservation
  dynamics, supplier order quantities that are either zero or confined to a
  min/max range, and a signed-square cost.

The grocer's external parameters are embedded as records below and also
shipped as CSV fixtures (``data/``) so tests can diff the two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .model import Array, ControlProblem


class ConfigError(ValueError):
    """Inconsistent or out-of-range problem configuration."""


# ---------------------------------------------------------------------------
# Linear-quadratic benchmark
# ---------------------------------------------------------------------------

LQR_X0 = 10.0
LQR_HORIZON = 1.0
#: chosen to contain the analytic optimal control with margin; tests verify
LQR_CONTROL_BOUNDS = (-30.0, 5.0)


def build_lqr() -> ControlProblem:
    """Scalar regulator: minimize the integral of x^2 + u^2 subject to
    xdot = x + u, x(0) = 10, over a unit horizon, no terminal cost."""

    def running_cost(t, x, u):
        return x[0] ** 2 + u[0] ** 2

    def dynamics(t, x, u):
        return np.array([x[0] + u[0]])

    def running_cost_batch(t, x, U):
        return x[0] ** 2 + U[:, 0] ** 2

    def dynamics_batch(t, x, U):
        return (x[0] + U[:, 0])[:, None]

    def h_x_gradient(t, x, p, u):
        return np.array([2.0 * x[0] + p[0]])

    return ControlProblem(
        state_dim=1,
        control_dim=1,
        horizon=LQR_HORIZON,
        initial_state=np.array([LQR_X0]),
        running_cost=running_cost,
        dynamics=dynamics,
        control_lower=np.array([LQR_CONTROL_BOUNDS[0]]),
        control_upper=np.array([LQR_CONTROL_BOUNDS[1]]),
        hamiltonian_x_gradient=h_x_gradient,
        running_cost_batch=running_cost_batch,
        dynamics_batch=dynamics_batch,
        name="lqr",
    )


def _lqr_modes() -> Tuple[float, float, float]:
    """Mode amplitudes (a, b) of the optimality system and the rate s.

    With the stationarity substitution u = -p/2 the optimality conditions are
    the linear system xdot = x - p/2, pdot = -2x - p, whose modes are
    exp(+-s t) with s = sqrt(2).  The boundary conditions x(0) = 10 and
    p(1) = 0 fix the amplitudes.
    """
    s = math.sqrt(2.0)
    ratio = math.exp(-2.0 * s) * (3.0 + 2.0 * s)  # a / b from p(1) = 0
    b = LQR_X0 / (1.0 + ratio)
    a = LQR_X0 * ratio / (1.0 + ratio)
    return a, b, s


def lqr_analytic_solution(t: float) -> Tuple[float, float, float, float]:
    """Closed-form optimum of the regulator at time ``t``.

    Returns ``(x, p, u, J_star)`` where J_star is the total optimal cost (a
    constant, returned alongside for convenience).
    """
    if not 0.0 <= t <= LQR_HORIZON:
        raise ValueError("t must lie in [0, 1]")
    a, b, s = _lqr_modes()
    ep = math.exp(s * t)
    em = math.exp(-s * t)
    x = a * ep + b * em
    p = 2.0 * (1.0 - s) * a * ep + 2.0 * (1.0 + s) * b * em
    u = -p / 2.0
    # closed-form integrals of x^2 and u^2 over [0, 1]
    c1 = 2.0 * (1.0 - s) * a
    d1 = 2.0 * (1.0 + s) * b
    grow = (math.exp(2.0 * s) - 1.0) / (2.0 * s)
    decay = (1.0 - math.exp(-2.0 * s)) / (2.0 * s)
    int_x2 = a * a * grow + 2.0 * a * b + b * b * decay
    int_u2 = 0.25 * (c1 * c1 * grow + 2.0 * c1 * d1 + d1 * d1 * decay)
    return x, p, u, int_x2 + int_u2


def lqr_hamiltonian_flow(t: float) -> Array:
    """State-transition matrix exp(A t) of the optimality system
    A = [[1, -1/2], [-2, -1]], via its eigendecomposition."""
    s = math.sqrt(2.0)
    V = np.array([[1.0, 1.0], [2.0 * (1.0 - s), 2.0 * (1.0 + s)]])
    D = np.diag([math.exp(s * t), math.exp(-s * t)])
    return V @ D @ np.linalg.inv(V)


# ---------------------------------------------------------------------------
# Grocer's scheduling problem: external parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ItemRecord:
    item_id: int
    name: str
    inv_carry_cost: float  # per unit inventory per unit time
    penalty: float  # per unit unmet demand per unit time

    def __post_init__(self):
        if self.inv_carry_cost < 0 or self.penalty < 0:
            raise ValueError("item costs must be nonnegative")


@dataclass(frozen=True)
class SupplierRecord:
    item_id: int
    supplier: str
    unit_cost: float
    fixed_cost: float
    min_qty: float
    max_qty: float
    supply_rate: Optional[Callable[[float], float]] = None  # in-transit rate, default 0

    def __post_init__(self):
        if not 0 <= self.min_qty <= self.max_qty:
            raise ValueError("need 0 <= min_qty <= max_qty")


@dataclass(frozen=True)
class CustomerRecord:
    customer_id: int
    importance: float
    revenue: Optional[Callable[[float, int], float]] = None  # (t, item_id) -> unit revenue

    def __post_init__(self):
        if not 0.0 < self.importance <= 1.0:
            raise ValueError("importance must lie in (0, 1]")


@dataclass(frozen=True)
class DemandModel:
    """Continualized demand rate per (customer, item); must be nonnegative."""

    theta: Callable[[float, int, int], float]  # (t, customer_id, item_id) -> rate
    description: str = ""


ITEMS: Tuple[ItemRecord, ...] = (
    ItemRecord(0, "Apple", 100.0, 10.0),
    ItemRecord(1, "Orange", 150.0, 25.0),
    ItemRecord(2, "Banana", 200.0, 39.0),
    ItemRecord(3, "Tea", 50.0, 30.0),
    ItemRecord(4, "Olive", 65.0, 25.0),
)

CUSTOMERS: Tuple[CustomerRecord, ...] = (
    CustomerRecord(1, 1.0),
    CustomerRecord(2, 0.4),
    CustomerRecord(3, 0.25),
)

SUPPLIERS: Tuple[SupplierRecord, ...] = (
    SupplierRecord(0, "New Hampshire", 20.0, 10.0, 7.0, 14.0),
    SupplierRecord(0, "Colorado", 25.0, 7.0, 4.0, 11.0),
    SupplierRecord(1, "Florida", 50.0, 10.0, 5.0, 20.0),
    SupplierRecord(1, "California", 70.0, 5.0, 4.0, 13.0),
    SupplierRecord(2, "Costa Rica", 20.0, 15.0, 8.0, 13.0),
    SupplierRecord(2, "Italy", 30.0, 20.0, 2.0, 13.0),
    SupplierRecord(2, "India", 15.0, 25.0, 6.0, 25.0),
    SupplierRecord(3, "India", 12.0, 25.0, 2.0, 16.0),
    SupplierRecord(3, "Sri Lanka", 11.0, 25.0, 9.0, 26.0),
    SupplierRecord(3, "England", 20.0, 15.0, 6.0, 14.0),
    SupplierRecord(3, "Market", 23.0, 20.0, 2.0, 18.0),
    SupplierRecord(4, "Greece", 20.0, 15.0, 15.0, 17.0),
    SupplierRecord(4, "Italy", 25.0, 12.0, 10.0, 22.0),
    SupplierRecord(4, "Market", 30.0, 18.0, 11.0, 14.0),
)

N_ITEMS = len(ITEMS)
N_CUSTOMERS = len(CUSTOMERS)
N_SUPPLIER_ROWS = len(SUPPLIERS)
SUPPLY_CHAIN_STATE_DIM = N_ITEMS + N_CUSTOMERS * N_ITEMS  # inventory then unmet demand
SUPPLY_CHAIN_CONTROL_DIM = N_SUPPLIER_ROWS + N_CUSTOMERS * N_ITEMS  # orders then deliveries
#: bound on per-(customer, item) delivery rates
DELIVERY_RATE_MAX = 20.0


def item_unit_cost_envelope() -> Array:
    """Per-item sum of supplier unit costs."""
    alpha = np.zeros(N_ITEMS)
    for rec in SUPPLIERS:
        alpha[rec.item_id] += rec.unit_cost
    return alpha


def item_fixed_cost_envelope() -> Array:
    """Per-item sum of supplier fixed costs."""
    beta = np.zeros(N_ITEMS)
    for rec in SUPPLIERS:
        beta[rec.item_id] += rec.fixed_cost
    return beta


def unmet_demand_weights() -> Array:
    """Normalized penalty weights, shape (customers, items):
    w_i * delta_j / sum_ij w_i * delta_j."""
    w = np.array([c.importance for c in CUSTOMERS])
    delta = np.array([it.penalty for it in ITEMS])
    table = np.outer(w, delta)
    return table / table.sum()


# ---------------------------------------------------------------------------
# Synthetic demand
# ---------------------------------------------------------------------------

_IMPORTANCE_BY_ID: Dict[int, float] = {c.customer_id: c.importance for c in CUSTOMERS}

DEMAND_PROFILES = ("constant", "seasonal", "pulse")


def synthetic_demand(profile: str, amplitude: float, period: float = 1.0) -> DemandModel:
    """Deterministic demand curves standing in for the historical data.

    * ``constant``: amplitude for every customer and item.
    * ``seasonal``: amplitude * (1 + sin(2 pi t / period)) / 2, scaled per
      customer by its importance.
    * ``pulse``: amplitude on [period, 2 * period), zero elsewhere.
    """
    if profile not in DEMAND_PROFILES:
        raise ConfigError(f"unknown demand profile {profile!r}; pick from {DEMAND_PROFILES}")
    if amplitude < 0:
        raise ConfigError("demand amplitude must be nonnegative")
    if profile in ("seasonal", "pulse") and not period > 0:
        raise ConfigError(f"{profile} demand needs a positive period")

    if profile == "constant":

        def theta(t: float, customer: int, item: int) -> float:
            return amplitude

    elif profile == "seasonal":

        def theta(t: float, customer: int, item: int) -> float:
            w = _IMPORTANCE_BY_ID.get(customer)
            if w is None:
                raise ConfigError(f"unknown customer id {customer}")
            return w * amplitude * (1.0 + math.sin(2.0 * math.pi * t / period)) / 2.0

    else:  # pulse

        def theta(t: float, customer: int, item: int) -> float:
            return amplitude if period <= t < 2.0 * period else 0.0

    return DemandModel(theta, f"{profile}(amplitude={amplitude:g}, period={period:g})")


def market_step_oracle(Z: float, theta: float, v: float, dt: float) -> float:
    """Single-row explicit Euler step of the market conservation dynamics:
    Z + dt * (-Z + theta - v).  Independent check used by tests."""
    return Z + dt * (-Z + theta - v)


# ---------------------------------------------------------------------------
# Grocer's problem builder
# ---------------------------------------------------------------------------


def _memoized_matrix(build: Callable[[float], Array]) -> Callable[[float], Array]:
    """Single-slot memoization; interval solves hammer the same t."""
    cache: Dict[float, Array] = {}

    def lookup(t: float) -> Array:
        hit = cache.get(t)
        if hit is None:
            hit = build(t)
            cache.clear()
            cache[t] = hit
        return hit

    return lookup


def build_supply_chain(
    demand: DemandModel,
    horizon: float,
    intervals: int,
    fixed_cost_mode: str = "on-order",
    revenue_factor: float = 2.0,
    initial_inventory: float = 10.0,
    suppliers: Sequence[SupplierRecord] = SUPPLIERS,
    customers: Sequence[CustomerRecord] = CUSTOMERS,
    items: Sequence[ItemRecord] = ITEMS,
) -> ControlProblem:
    """Assemble the grocer's problem as a ControlProblem.

    State (n=20): per-item inventory X, then unmet demand Z laid out
    item-major (item outer, customer inner).  Control (m=29): one order rate
    per supplier row in table order, then delivery rates laid out
    customer-major (customer outer, item inner).  Both state blocks are
    floored at zero.

    The stage cost is the signed square J * |J| of the net cost rate J
    (revenue negative; ordering, carrying and unmet-demand penalties
    positive).  Fixed ordering costs are charged per item whenever its total
    order rate is positive (``on-order``) or unconditionally (``always``).
    """
    if fixed_cost_mode not in ("on-order", "always"):
        raise ConfigError("fixed_cost_mode must be 'on-order' or 'always'")
    if not horizon > 0:
        raise ConfigError("horizon must be positive")
    if intervals < 1:
        raise ConfigError("intervals must be >= 1")
    if revenue_factor < 0:
        raise ConfigError("revenue_factor must be nonnegative")
    if initial_inventory < 0:
        raise ConfigError("initial_inventory must be nonnegative")
    dt = horizon / intervals
    if dt > 1.0:
        raise ConfigError(
            f"step size {dt:g} exceeds 1; the explicit Euler decay step would "
            "overshoot the zero floor (raise intervals or shrink the horizon)"
        )
    n_items = len(items)
    n_cust = len(customers)
    n_sup = len(suppliers)
    n = n_items + n_cust * n_items
    m = n_sup + n_cust * n_items
    for rec in suppliers:
        if not 0 <= rec.item_id < n_items:
            raise ConfigError(f"supplier {rec.supplier!r} references unknown item {rec.item_id}")

    agg = np.zeros((n_sup, n_items))
    for row, rec in enumerate(suppliers):
        agg[row, rec.item_id] = 1.0
    alpha_env = np.array([rec.unit_cost for rec in suppliers]) @ agg
    beta_env = np.array([rec.fixed_cost for rec in suppliers]) @ agg
    gamma_carry = np.array([it.inv_carry_cost for it in items])
    w = np.array([c.importance for c in customers])
    delta_pen = np.array([it.penalty for it in items])
    wbar = np.outer(w, delta_pen)
    wbar = wbar / wbar.sum()  # (customers, items)
    item_ids = [it.item_id for it in items]
    cust_ids = [c.customer_id for c in customers]

    def build_theta(t: float) -> Array:
        table = np.array(
            [[demand.theta(t, cid, iid) for iid in item_ids] for cid in cust_ids]
        )
        if not np.all(np.isfinite(table)) or np.any(table < 0):
            raise ConfigError(f"demand model produced a negative or non-finite rate at t={t}")
        return table

    theta_mat = _memoized_matrix(build_theta)

    has_supply = any(rec.supply_rate is not None for rec in suppliers)

    def build_supply(t: float) -> Array:
        rate = np.zeros(n_items)
        for rec in suppliers:
            if rec.supply_rate is not None:
                rate[rec.item_id] += float(rec.supply_rate(t))
        return rate

    supply_vec = _memoized_matrix(build_supply) if has_supply else (lambda t: 0.0)

    has_custom_revenue = any(c.revenue is not None for c in customers)
    default_revenue = revenue_factor * alpha_env

    def build_revenue(t: float) -> Array:
        rows = []
        for c in customers:
            if c.revenue is None:
                rows.append(default_revenue)
            else:
                rows.append(np.array([float(c.revenue(t, iid)) for iid in item_ids]))
        return np.stack(rows)

    revenue_mat = _memoized_matrix(build_revenue) if has_custom_revenue else (
        lambda t: default_revenue[None, :]
    )

    def split_state(x: Array) -> Tuple[Array, Array]:
        X = x[:n_items]
        Z_ci = x[n_items:].reshape(n_items, n_cust).T  # (customers, items)
        return X, Z_ci

    # The dynamics are affine in the control: f(t, x, u) = drift(t, x) + u @ B
    # with B constant.  B routes each order column into its item's inventory
    # row and each delivery column out of both its inventory row and its
    # market row.
    B = np.zeros((m, n))
    B[:n_sup, :n_items] = agg
    for c in range(n_cust):
        for j in range(n_items):
            col = n_sup + c * n_items + j
            B[col, j] = -1.0  # inventory drain
            B[col, n_items + j * n_cust + c] = -1.0  # unmet-demand drain
    # theta laid out like the Z state block (item-major)
    theta_state = _memoized_matrix(lambda t: theta_mat(t).T.ravel())
    drift_cache: Dict[Tuple[float, bytes], Array] = {}

    def state_drift(t: float, x: Array) -> Array:
        # one interval solve evaluates dozens of control batches at the same
        # (t, x); memoize the control-independent part
        key = (t, x.tobytes())
        hit = drift_cache.get(key)
        if hit is None:
            hit = np.concatenate([-x[:n_items] + supply_vec(t), -x[n_items:] + theta_state(t)])
            drift_cache.clear()
            drift_cache[key] = hit
        return hit

    def dynamics_batch(t: float, x: Array, U: Array) -> Array:
        U = np.asarray(U, dtype=float)
        x = np.asarray(x, dtype=float)
        return state_drift(t, x) + U @ B

    # unit revenue per delivery column, customer-major like the control layout
    revenue_cols = _memoized_matrix(
        lambda t: np.broadcast_to(revenue_mat(t), (n_cust, n_items)).ravel()
    )

    def net_cost_rate_batch(t: float, x: Array, U: Array) -> Array:
        U = np.asarray(U, dtype=float)
        x = np.asarray(x, dtype=float)
        X, Z_ci = split_state(x)
        mu_hat = U[:, :n_sup] @ agg
        ordering = mu_hat @ alpha_env
        revenue = U[:, n_sup:] @ revenue_cols(t)
        if fixed_cost_mode == "on-order":
            fixed = (mu_hat > 0.0) @ beta_env
        else:
            fixed = float(beta_env.sum())
        holding = float(gamma_carry @ X + (wbar * Z_ci).sum())
        return -revenue + ordering + fixed + holding

    def running_cost_batch(t: float, x: Array, U: Array) -> Array:
        J = net_cost_rate_batch(t, x, U)
        return J * np.abs(J)

    def dynamics(t: float, x: Array, u: Array) -> Array:
        return dynamics_batch(t, x, np.asarray(u, dtype=float)[None, :])[0]

    def running_cost(t: float, x: Array, u: Array) -> float:
        return float(running_cost_batch(t, x, np.asarray(u, dtype=float)[None, :])[0])

    cost_state_gradient = np.concatenate([gamma_carry, wbar.T.ravel()])

    def h_x_gradient(t: float, x: Array, p: Array, u: Array) -> Array:
        J = float(net_cost_rate_batch(t, x, np.asarray(u, dtype=float)[None, :])[0])
        # d(J|J|)/dx = 2|J| dJ/dx; the dynamics are -identity in the state
        return 2.0 * abs(J) * cost_state_gradient - p

    control_lower = np.zeros(m)
    control_upper = np.concatenate(
        [np.array([rec.max_qty for rec in suppliers]), np.full(n_cust * n_items, DELIVERY_RATE_MAX)]
    )
    gated = {row: (rec.min_qty, rec.max_qty) for row, rec in enumerate(suppliers)}
    x0 = np.concatenate([np.full(n_items, initial_inventory), np.zeros(n_cust * n_items)])

    return ControlProblem(
        state_dim=n,
        control_dim=m,
        horizon=horizon,
        initial_state=x0,
        running_cost=running_cost,
        dynamics=dynamics,
        control_lower=control_lower,
        control_upper=control_upper,
        hamiltonian_x_gradient=h_x_gradient,
        state_lower=np.zeros(n),
        dynamics_batch=dynamics_batch,
        running_cost_batch=running_cost_batch,
        gated_dims=gated,
        name="supply-chain",
    )


# ---------------------------------------------------------------------------
# Table fixtures
# ---------------------------------------------------------------------------

FIXTURE_FILES = {
    "items": "grocer_items.csv",
    "customers": "grocer_customers.csv",
    "suppliers": "grocer_suppliers.csv",
}


def _fmt(value: float) -> str:
    return format(value, "g")


def render_items_csv() -> str:
    lines = ["item_id,name,inv_carry_cost,penalty"]
    for it in ITEMS:
        lines.append(f"{it.item_id},{it.name},{_fmt(it.inv_carry_cost)},{_fmt(it.penalty)}")
    return "\n".join(lines) + "\n"


def render_customers_csv() -> str:
    lines = ["customer_id,importance"]
    for c in CUSTOMERS:
        lines.append(f"{c.customer_id},{_fmt(c.importance)}")
    return "\n".join(lines) + "\n"


def render_suppliers_csv() -> str:
    lines = ["item_id,supplier,unit_cost,fixed_cost,min_qty,max_qty"]
    for rec in SUPPLIERS:
        lines.append(
            f"{rec.item_id},{rec.supplier},{_fmt(rec.unit_cost)},{_fmt(rec.fixed_cost)},"
            f"{_fmt(rec.min_qty)},{_fmt(rec.max_qty)}"
        )
    return "\n".join(lines) + "\n"


RENDERERS = {
    "items": render_items_csv,
    "customers": render_customers_csv,
    "suppliers": render_suppliers_csv,
}


def fixture_text(table: str) -> str:
    """Contents of the shipped CSV fixture for ``table``."""
    if table not in FIXTURE_FILES:
        raise KeyError(f"unknown table {table!r}")
    return (
        resources.files("chatterctl").joinpath("data", FIXTURE_FILES[table]).read_text("utf-8")
    )
