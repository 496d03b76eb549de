# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled bilateral trading kernel; mirrors ``_py.shop`` operation for operation."""

from libc.math cimport INFINITY


def shop(const long long[:] rows, const double[:, :] budgets, double[:] buyer_cash, double[:, :] buyer_res,
         const long long[:] cand_ptr, const long long[:] cand_idx,
         const long long[:] firm_sector, double[:] firm_price, double[:] firm_inv, double[:] firm_cash,
         double[:] firm_demand, double[:] firm_revenue,
         double k, double floor, double[:, :] spent, double[:, :] failed,
         long long[:] tx_row, long long[:] tx_firm, long long[:] tx_sector,
         double[:] tx_units, double[:] tx_price, double[:] tx_total):
    cdef Py_ssize_t n_sectors = budgets.shape[1]
    cdef Py_ssize_t cap = tx_row.shape[0]
    cdef Py_ssize_t ntx = 0
    cdef double up = 1.0 + k
    cdef double down = 1.0 - k
    cdef Py_ssize_t i, r, s, j, lo, hi, best
    cdef long long f
    cdef double b, cash, bp, p, res, want, units, total, np_, nr
    for i in range(rows.shape[0]):
        r = rows[i]
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
            bp = INFINITY
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
