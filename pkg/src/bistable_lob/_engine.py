"""Compiled per-step kernel for the exchange.

Everything here works in integer price ticks so that money is conserved
exactly. The public, readable version of the same rules lives in
:mod:`bistable_lob.market` (``decide_action`` / ``match_orders``); the test
suite checks that both produce identical books and trades.
"""

import numpy as np
from numba import njit

# floor() guard against products like 1000 * 1.05 landing at 1049.999...
TICK_EPS = 1e-9


@njit(cache=True)
def _stable_order(prices, n, descending):
    """Indices of ``prices[:n]`` sorted by price, ties kept in arrival order."""
    if n == 0:
        return np.empty(0, np.int64)
    lo = prices[0]
    hi = prices[0]
    for j in range(n):
        v = prices[j]
        if v < lo:
            lo = v
        if v > hi:
            hi = v
    span = hi - lo + 1
    if span > 4 * n + 1024:
        if descending:
            return np.argsort(-prices[:n], kind="mergesort")
        return np.argsort(prices[:n], kind="mergesort")
    start = np.zeros(span + 1, np.int64)
    for j in range(n):
        v = prices[j] - lo
        if descending:
            v = span - 1 - v
        start[v + 1] += 1
    for v in range(span):
        start[v + 1] += start[v]
    out = np.empty(n, np.int64)
    for j in range(n):
        v = prices[j] - lo
        if descending:
            v = span - 1 - v
        out[start[v]] = j
        start[v] += 1
    return out


@njit(cache=True)
def step_kernel(money, shares, price, perm, draws, risk_num):
    """Run one trading round in place.

    ``price`` is the last close in ticks, ``perm[r]`` is the trader arriving
    at position ``r`` and ``draws[r]`` is that trader's expectation noise.
    ``risk_num`` is (gamma / 2) * Var(P) expressed in ticks squared; zero
    disables the risk adjustment.

    Returns ``(close, n_bids, n_asks, bid_ids, ask_ids, trade_prices)`` where
    the last three arrays hold the executed trades in execution order.
    """
    n = perm.shape[0]
    bid_lim = np.empty(n, np.int64)
    bid_id = np.empty(n, np.int64)
    ask_lim = np.empty(n, np.int64)
    ask_id = np.empty(n, np.int64)
    nb = 0
    na = 0
    p = float(price)
    for r in range(n):
        i = perm[r]
        e = p * (1.0 + draws[r])
        h = 0.0
        if risk_num > 0.0:
            w = money[i] + shares[i] * price
            if w <= 0:
                continue
            h = risk_num / w
        if p < e - h:
            lim = np.int64(np.floor(e + TICK_EPS))
            if lim > 0 and money[i] >= lim:
                bid_lim[nb] = lim
                bid_id[nb] = i
                nb += 1
        elif p > e + h:
            lim = np.int64(np.floor(e + TICK_EPS))
            if lim < 0:
                lim = 0
            if shares[i] >= 1:
                ask_lim[na] = lim
                ask_id[na] = i
                na += 1

    ob = _stable_order(bid_lim, nb, True)
    oa = _stable_order(ask_lim, na, False)
    m = min(nb, na)
    out_b = np.empty(m, np.int64)
    out_a = np.empty(m, np.int64)
    out_p = np.empty(m, np.int64)
    k = 0
    close = price
    while k < m:
        b = ob[k]
        a = oa[k]
        if bid_lim[b] < ask_lim[a]:
            break
        tp = (bid_lim[b] + ask_lim[a]) // 2
        buyer = bid_id[b]
        seller = ask_id[a]
        money[buyer] -= tp
        money[seller] += tp
        shares[buyer] += 1
        shares[seller] -= 1
        out_b[k] = buyer
        out_a[k] = seller
        out_p[k] = tp
        close = tp
        k += 1
    return close, nb, na, out_b[:k], out_a[:k], out_p[:k]
