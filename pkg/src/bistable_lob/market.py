"""The exchange: traders, the decision rule, the order book and the run loop.

Prices and cash are held internally as integer multiples of ``price_tick``.
Derived prices (a trader's limit price and the mid-price a trade settles at)
are truncated toward zero onto the tick grid, which is what lets a falling
price actually land on zero and stay there.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import io
import math
from dataclasses import dataclass
from collections.abc import Sequence
from typing import Optional

import numpy as np

from ._engine import TICK_EPS, step_kernel
from .rng import check_seed, make_rng

CSV_HEADER = ("step", "close", "bids", "asks", "imbalance", "trades", "volume")


class ConfigError(ValueError):
    """Invalid simulation configuration; ``field`` names the offending entry."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class MarketConfig:
    """Simulation parameters. The defaults are the baseline market."""

    n_traders: int = 10_000
    horizon: int = 5_000
    initial_price: float = 10.0
    initial_money: float = 174.0
    initial_shares: int = 20
    sigma: float = 0.15
    gamma: float = 0.0
    price_tick: float = 0.01
    zero_threshold: float = 0.005
    variance_window: int = 20
    seed: int = 0

    def __post_init__(self):
        def need(ok, name, msg):
            if not ok:
                raise ConfigError(name, msg)

        for name in ("n_traders", "horizon", "initial_shares", "variance_window", "seed"):
            v = getattr(self, name)
            need(isinstance(v, (int, np.integer)) and not isinstance(v, bool),
                 name, f"must be an integer, got {v!r}")
        for name in ("initial_price", "initial_money", "sigma", "gamma",
                     "price_tick", "zero_threshold"):
            v = getattr(self, name)
            need(isinstance(v, (int, float, np.floating, np.integer)) and not isinstance(v, bool)
                 and math.isfinite(v), name, f"must be a finite number, got {v!r}")
        need(self.n_traders >= 2, "n_traders", "must be >= 2")
        need(self.horizon >= 1, "horizon", "must be >= 1")
        need(self.price_tick > 0, "price_tick", "must be > 0")
        need(self.initial_price > 0, "initial_price", "must be > 0")
        need(self.initial_money >= 0, "initial_money", "must be >= 0")
        need(self.initial_shares >= 0, "initial_shares", "must be >= 0")
        need(0 <= self.sigma < 1, "sigma", f"must lie in [0, 1), got {self.sigma}")
        need(self.gamma >= 0, "gamma", "must be >= 0")
        need(self.zero_threshold >= 0, "zero_threshold", "must be >= 0")
        need(self.variance_window >= 2, "variance_window", "must be >= 2")
        try:
            check_seed(self.seed)
        except ValueError as exc:
            raise ConfigError("seed", str(exc)) from None
        for name in ("initial_price", "initial_money"):
            v = getattr(self, name) / self.price_tick
            need(abs(v - round(v)) < 1e-6, name, "must be a multiple of price_tick")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown configuration key")
        return cls(**data)

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def ticks(self, price):
        """Exact tick count of an on-grid price."""
        return int(round(price / self.price_tick))


class Side(enum.Enum):
    BID = "bid"
    ASK = "ask"


@dataclass
class TraderState:
    money: float
    shares: int


@dataclass(frozen=True)
class Order:
    side: Side
    price: float
    trader_id: int
    arrival_rank: int
    quantity: int = 1


@dataclass(frozen=True)
class Trade:
    bid_trader: int
    ask_trader: int
    price: float
    quantity: int = 1
    step: int = 0
    intra_step_rank: int = 0


@dataclass(frozen=True)
class Action:
    """Outcome of the decision rule; ``side`` is None for "do nothing"."""

    side: Optional[Side]
    limit: float = 0.0

    @property
    def is_nothing(self):
        return self.side is None


NOTHING = Action(None)


@dataclass(frozen=True)
class StepRecord:
    step: int
    close_price: float
    n_bids: int
    n_asks: int
    imbalance: int
    n_trades: int
    volume: int


def floor_ticks(value_in_ticks):
    return int(math.floor(value_in_ticks + TICK_EPS))


def decide_action(trader, last_close, config, noise_draw, price_variance=0.0):
    """Bid, ask or stay out given a private expectation ``last_close * (1 + noise)``.

    With ``gamma > 0`` the expectation must clear the last close by the risk
    half-width ``gamma / 2 * Var / W`` where W is the trader's mark-to-market
    wealth. Feasibility against the trader's cash and inventory is checked
    at submission, not here.
    """
    tick = config.price_tick
    p = config.ticks(last_close)
    e = p * (1.0 + noise_draw)
    h = 0.0
    if config.gamma > 0:
        wealth = trader.money + trader.shares * last_close
        if wealth <= 0:
            return NOTHING
        h = (config.gamma / 2.0) * price_variance / wealth / tick
    if p < e - h:
        return Action(Side.BID, floor_ticks(e) * tick)
    if p > e + h:
        return Action(Side.ASK, max(floor_ticks(e), 0) * tick)
    return NOTHING


def match_orders(bids, asks, price_tick=0.01, step=0):
    """Price-priority matching of one round's book.

    Bids are ranked by descending price, asks by ascending price, ties by
    arrival rank. The best pair trades one unit at the mid-price (truncated
    to the tick grid) for as long as the best bid is at least the best ask.
    Returns ``(trades, unmatched_bids, unmatched_asks)``.
    """
    bids = sorted(bids, key=lambda o: (-o.price, o.arrival_rank))
    asks = sorted(asks, key=lambda o: (o.price, o.arrival_rank))
    trades = []
    k = 0
    while k < min(len(bids), len(asks)) and bids[k].price >= asks[k].price:
        b, a = bids[k], asks[k]
        mid = (round(b.price / price_tick) + round(a.price / price_tick)) // 2
        q = min(b.quantity, a.quantity)
        trades.append(Trade(b.trader_id, a.trader_id, mid * price_tick, q, step, k))
        k += 1
    return trades, bids[k:], asks[k:]


def expected_price_change(price, n_asks, n_bids, sigma):
    """Approximate one-step drift ``sigma/2 * P * (1/(N_A+1) - 1/(N_B+1))``."""
    if n_asks < 0 or n_bids < 0:
        raise ValueError("order counts must be non-negative")
    return sigma / 2.0 * price * (1.0 / (n_asks + 1) - 1.0 / (n_bids + 1))


class Market:
    """Mutable market state: every trader's cash and shares plus the last close."""

    def __init__(self, config, rng=None):
        self.config = config
        self.rng = rng if rng is not None else make_rng(config.seed)
        n = config.n_traders
        self.money = np.full(n, config.ticks(config.initial_money), dtype=np.int64)
        self.shares = np.full(n, config.initial_shares, dtype=np.int64)
        self.price = config.ticks(config.initial_price)
        self.t = 0
        self.last_trades = []
        self._recent = [self.price]

    @property
    def close(self):
        return self.price * self.config.price_tick

    @property
    def total_money(self):
        return int(self.money.sum())

    @property
    def total_shares(self):
        return int(self.shares.sum())

    def trader(self, i):
        return TraderState(self.money[i] * self.config.price_tick, int(self.shares[i]))

    def price_variance(self):
        """Sample variance of the recent closes (currency units squared)."""
        w = self._recent[-self.config.variance_window:]
        if len(w) < 2:
            return 0.0
        return float(np.var(np.asarray(w) * self.config.price_tick, ddof=1))

    def step(self, noise=None, order=None):
        """Advance one round. ``noise``/``order`` override the random draws."""
        cfg = self.config
        n = cfg.n_traders
        self.t += 1
        if self.price <= 0 and noise is None:
            self.last_trades = []
            self._remember()
            return StepRecord(self.t, 0.0, 0, 0, 0, 0, 0)
        if order is None:
            order = self.rng.permutation(n)
        if noise is None:
            noise = self.rng.uniform(-cfg.sigma, cfg.sigma, n)
        order = np.ascontiguousarray(order, dtype=np.int64)
        noise = np.ascontiguousarray(noise, dtype=np.float64)
        risk = 0.0
        if cfg.gamma > 0:
            risk = cfg.gamma / 2.0 * self.price_variance() / cfg.price_tick**2
        close, nb, na, bid_ids, ask_ids, prices = step_kernel(
            self.money, self.shares, self.price, order, noise, risk)
        self.price = int(close)
        tick = cfg.price_tick
        self.last_trades = TradeLog(bid_ids, ask_ids, prices, tick, self.t)
        self._remember()
        k = len(prices)
        return StepRecord(self.t, self.close, int(nb), int(na), int(nb - na), k, k)

    def _remember(self):
        if self.config.gamma > 0:
            self._recent.append(self.price)
            if len(self._recent) > self.config.variance_window:
                del self._recent[0]


class TradeLog(Sequence):
    """The trades of one step, built into :class:`Trade` objects on access."""

    def __init__(self, bid_ids, ask_ids, prices, tick, step):
        self._b, self._a, self._p = bid_ids, ask_ids, prices
        self._tick, self._step = tick, step

    def __len__(self):
        return len(self._p)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[j] for j in range(*k.indices(len(self)))]
        if k < 0:
            k += len(self)
        if not 0 <= k < len(self):
            raise IndexError(k)
        return Trade(int(self._b[k]), int(self._a[k]), int(self._p[k]) * self._tick,
                     1, self._step, k)


@dataclass
class Trajectory:
    """Per-step records of one run; index ``i`` holds step ``i + 1``."""

    close: np.ndarray
    bids: np.ndarray
    asks: np.ndarray
    trades: np.ndarray
    volume: np.ndarray
    config: Optional[MarketConfig] = None
    price_tick: float = 0.01

    @property
    def imbalance(self):
        return self.bids - self.asks

    @property
    def steps(self):
        return np.arange(1, len(self.close) + 1)

    def __len__(self):
        return len(self.close)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("close", "bids", "asks", "trades", "volume"))

    def records(self):
        for i in range(len(self)):
            yield StepRecord(i + 1, float(self.close[i]), int(self.bids[i]), int(self.asks[i]),
                             int(self.bids[i] - self.asks[i]), int(self.trades[i]),
                             int(self.volume[i]))

    def to_csv(self, path=None):
        """Write the trajectory CSV; returns the text when ``path`` is None."""
        decimals = max(2, -int(math.floor(math.log10(self.price_tick) + 1e-9)))
        buf = io.StringIO()
        buf.write(",".join(CSV_HEADER) + "\n")
        imb = self.imbalance
        for i in range(len(self)):
            buf.write(f"{i + 1},{self.close[i]:.{decimals}f},{self.bids[i]},{self.asks[i]},"
                      f"{imb[i]},{self.trades[i]},{self.volume[i]}\n")
        text = buf.getvalue()
        if path is None:
            return text
        with open(path, "w", newline="") as fh:
            fh.write(text)
        return None

    @classmethod
    def from_csv(cls, path, config=None):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(rows[0]) != CSV_HEADER:
            raise ValueError(f"{path}: not a trajectory CSV")
        body = np.array(rows[1:], dtype=float).reshape(-1, len(CSV_HEADER))
        ints = body[:, 2:].astype(np.int64)
        tick = config.price_tick if config is not None else 0.01
        close = np.round(body[:, 1] / tick) * tick
        return cls(close, ints[:, 0], ints[:, 1], ints[:, 3], ints[:, 4], config, tick)


def run_simulation(config, progress=None):
    """Run ``config.horizon`` rounds from the initial endowments."""
    market = Market(config)
    T = config.horizon
    close = np.empty(T, dtype=np.int64)
    bids = np.zeros(T, dtype=np.int64)
    asks = np.zeros(T, dtype=np.int64)
    trades = np.zeros(T, dtype=np.int64)
    for t in range(T):
        rec = market.step()
        close[t] = market.price
        bids[t], asks[t], trades[t] = rec.n_bids, rec.n_asks, rec.n_trades
        if progress is not None:
            progress(t)
    tick = config.price_tick
    return Trajectory(close * tick, bids, asks, trades, trades.copy(), config, tick)
