"""Pure-Python bilateral trading kernel.

Reference semantics for the compiled twin in ``_ext.pyx``; both must produce
bit-identical results.
"""

import math


def shop(rows, budgets, buyer_cash, buyer_res, cand_ptr, cand_idx,
         firm_sector, firm_price, firm_inv, firm_cash, firm_demand, firm_revenue,
         k, floor, spent, failed, tx_row, tx_firm, tx_sector, tx_units, tx_price, tx_total):
    """Run one purchase attempt per (buyer row, sector) with a positive budget.

    Buyers go in the order of ``rows``; sectors in ascending order.  Each
    attempt picks the cheapest in-radius candidate of the sector with stock
    (lowest id on ties), trades if its price is within the buyer's
    reservation, and adjusts both prices by ``1 +/- k``.  Unfilled budgets are
    added to ``failed``.  Returns the number of logged transactions.
    """
    n_sectors = budgets.shape[1]
    cap = tx_row.shape[0]
    ntx = 0
    up = 1.0 + k
    down = 1.0 - k
    for r in rows:
        lo = cand_ptr[r]
        hi = cand_ptr[r + 1]
        for s in range(n_sectors):
            b = budgets[r, s]
            if b <= 0.0:
                continue
            cash = buyer_cash[r]
            if b > cash:
                b = cash
            if b <= 0.0:
                continue
            best = -1
            bp = math.inf
            for j in range(lo, hi):
                f = cand_idx[j]
                if firm_sector[f] == s and firm_inv[f] > 0.0:
                    p = firm_price[f]
                    if p < bp:
                        bp = p
                        best = f
            res = buyer_res[r, s]
            if best >= 0 and bp <= res:
                want = b / bp
                units = firm_inv[best]
                if want < units:
                    units = want
                total = units * bp
                if total > cash:
                    total = cash
                firm_demand[best] += want
                firm_inv[best] -= units
                buyer_cash[r] = cash - total
                firm_cash[best] += total
                firm_revenue[best] += total
                spent[r, s] += total
                np_ = bp * up
                firm_price[best] = np_ if np_ > floor else floor
                nr = res * down
                buyer_res[r, s] = nr if nr > floor else floor
                if ntx < cap:
                    tx_row[ntx] = r
                    tx_firm[ntx] = best
                    tx_sector[ntx] = s
                    tx_units[ntx] = units
                    tx_price[ntx] = bp
                    tx_total[ntx] = total
                ntx += 1
            else:
                failed[r, s] += b
                if best >= 0:
                    np_ = bp * down
                    firm_price[best] = np_ if np_ > floor else floor
                nr = res * up
                buyer_res[r, s] = nr if nr > floor else floor
    return ntx
