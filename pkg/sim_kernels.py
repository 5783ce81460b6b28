"""
Compiled Kernels for the Simulation Layer

This module implements:
- Variable-to-clause incidence in CSR form
- Layered queue peeling to the 2-core, recording the peel order
- Back-substitution of peeled variables (linear equations and extendible tables)
- Packed Gaussian elimination over GF(2) and over GF(3) with two bitplanes
- Structured elimination: weight-one peeling with inactivation, dense only on the
  inactive columns
- Unit propagation with chronological backtracking for extendible constraints

Every kernel is compiled with numba in nopython mode and releases the GIL, so trials
can share a thread pool.
"""

import numba as nb
import numpy as np

ONE = np.uint64(1)
WORD_BITS = 64

STATUS_UNSAT = 0
STATUS_SAT = 1
STATUS_ABORTED = -1


@nb.njit(nogil=True, cache=True)
def incidence(clause_vars, n):
    """
    CSR incidence: clauses containing variable v are occ[offsets[v]:offsets[v+1]].

    A variable repeated inside a clause is listed once per slot.
    """
    m, k = clause_vars.shape
    offsets = np.zeros(n + 1, dtype=np.int64)
    for c in range(m):
        for j in range(k):
            offsets[clause_vars[c, j] + 1] += 1
    for v in range(n):
        offsets[v + 1] += offsets[v]
    fill = offsets[:-1].copy()
    occ = np.empty(m * k, dtype=np.int64)
    for c in range(m):
        for j in range(k):
            v = clause_vars[c, j]
            occ[fill[v]] = c
            fill[v] += 1
    return offsets, occ


@nb.njit(nogil=True, cache=True)
def peel_core(clause_vars, n):
    """
    Peel every variable with at most one occurrence, together with its clause.

    Returns:
    --------
    var_alive, clause_alive : uint8 arrays marking the 2-core
    peel_clause, peel_pivot : removed clauses and the variable each one was removed
                              through, in removal order (length n_peeled)
    n_peeled : int
    rounds : int
        Number of layers of the peeling queue that removed something
    """
    m, k = clause_vars.shape
    offsets, occ = incidence(clause_vars, n)
    degree = np.empty(n, dtype=np.int64)
    for v in range(n):
        degree[v] = offsets[v + 1] - offsets[v]
    var_alive = np.ones(n, dtype=np.uint8)
    clause_alive = np.ones(m, dtype=np.uint8)
    peel_clause = np.empty(m, dtype=np.int64)
    peel_pivot = np.empty(m, dtype=np.int64)
    n_peeled = 0

    current = np.empty(n, dtype=np.int64)
    following = np.empty(n, dtype=np.int64)
    n_current = 0
    for v in range(n):
        if degree[v] <= 1:
            current[n_current] = v
            n_current += 1

    rounds = 0
    while n_current > 0:
        n_following = 0
        removed = False
        for i in range(n_current):
            v = current[i]
            if var_alive[v] == 0 or degree[v] > 1:
                continue
            var_alive[v] = 0
            removed = True
            if degree[v] == 0:
                continue
            owner = -1
            for p in range(offsets[v], offsets[v + 1]):
                if clause_alive[occ[p]] == 1:
                    owner = occ[p]
                    break
            clause_alive[owner] = 0
            peel_clause[n_peeled] = owner
            peel_pivot[n_peeled] = v
            n_peeled += 1
            for j in range(k):
                u = clause_vars[owner, j]
                degree[u] -= 1
                if u != v and var_alive[u] == 1 and degree[u] == 1:
                    following[n_following] = u
                    n_following += 1
        if removed:
            rounds += 1
        current, following = following, current
        n_current = n_following
    return var_alive, clause_alive, peel_clause, peel_pivot, n_peeled, rounds


@nb.njit(nogil=True, cache=True)
def backfill_linear(clause_vars, payload, peel_clause, peel_pivot, n_peeled, values, q):
    """Assign peeled pivots in reverse order so their clause sums to its right-hand side."""
    k = clause_vars.shape[1]
    for i in range(n_peeled - 1, -1, -1):
        c = peel_clause[i]
        pivot = peel_pivot[i]
        total = 0
        for j in range(k):
            u = clause_vars[c, j]
            if u != pivot:
                total += values[u]
        values[pivot] = (payload[c] - total) % q


@nb.njit(nogil=True, cache=True)
def table_index(clause_vars, c, values, d):
    k = clause_vars.shape[1]
    index = 0
    for j in range(k - 1):
        index = index * d + values[clause_vars[c, j]]
    return index


@nb.njit(nogil=True, cache=True)
def clause_holds(clause_vars, payload, tables, c, values, d):
    k = clause_vars.shape[1]
    return tables[payload[c], table_index(clause_vars, c, values, d)] == values[clause_vars[c, k - 1]]


@nb.njit(nogil=True, cache=True)
def backfill_ue(clause_vars, payload, tables, d, peel_clause, peel_pivot, n_peeled, values):
    """Give each peeled pivot the unique value completing its clause, in reverse order."""
    for i in range(n_peeled - 1, -1, -1):
        c = peel_clause[i]
        pivot = peel_pivot[i]
        for value in range(d):
            values[pivot] = value
            if clause_holds(clause_vars, payload, tables, c, values, d):
                break


@nb.njit(nogil=True, cache=True)
def pack_rows(clause_vars, payload, rows, col_of_var, q, ncols):
    """
    Pack the equations `rows` into bitplanes over ncols coefficient columns plus the
    right-hand side in column ncols.

    Coefficients are slot counts mod q. Over GF(2) only `lo` is used; over GF(3) bit
    set in `lo` means 1 and bit set in `hi` means 2.
    """
    k = clause_vars.shape[1]
    words = (ncols + 1 + WORD_BITS - 1) // WORD_BITS
    lo = np.zeros((rows.shape[0], words), dtype=np.uint64)
    hi = np.zeros((rows.shape[0], words), dtype=np.uint64)
    counts = np.zeros(ncols + 1, dtype=np.int64)
    for r in range(rows.shape[0]):
        c = rows[r]
        for j in range(k):
            counts[col_of_var[clause_vars[c, j]]] += 1
        counts[ncols] = payload[c]
        for j in range(k + 1):
            col = ncols if j == k else col_of_var[clause_vars[c, j]]
            if counts[col] < 0:
                continue
            coef = counts[col] % q
            counts[col] = -1
            mask = ONE << np.uint64(col & 63)
            if coef == 1:
                lo[r, col >> 6] |= mask
            elif coef == 2:
                hi[r, col >> 6] |= mask
        for j in range(k):
            counts[col_of_var[clause_vars[c, j]]] = 0
        counts[ncols] = 0
    return lo, hi


@nb.njit(nogil=True, cache=True)
def eliminate_gf2(lo, ncols):
    """
    Reduce the packed system to reduced row echelon form in place.

    Returns (consistent, solution) with free variables set to 0.
    """
    rows, words = lo.shape
    pivot_col = np.full(rows, -1, dtype=np.int64)
    rank = 0
    for col in range(ncols):
        if rank == rows:
            break
        w = col >> 6
        mask = ONE << np.uint64(col & 63)
        pivot = -1
        for r in range(rank, rows):
            if lo[r, w] & mask:
                pivot = r
                break
        if pivot < 0:
            continue
        if pivot != rank:
            for j in range(words):
                lo[pivot, j], lo[rank, j] = lo[rank, j], lo[pivot, j]
        for r in range(rows):
            if r != rank and lo[r, w] & mask:
                for j in range(w, words):
                    lo[r, j] ^= lo[rank, j]
        pivot_col[rank] = col
        rank += 1

    rhs_w = ncols >> 6
    rhs_mask = ONE << np.uint64(ncols & 63)
    solution = np.zeros(ncols, dtype=np.int64)
    for r in range(rank, rows):
        if lo[r, rhs_w] & rhs_mask:
            return False, solution
    for r in range(rank):
        if lo[r, rhs_w] & rhs_mask:
            solution[pivot_col[r]] = 1
    return True, solution


@nb.njit(nogil=True, cache=True)
def eliminate_gf3(lo, hi, ncols):
    """GF(3) counterpart of eliminate_gf2 on the two bitplanes."""
    rows, words = lo.shape
    pivot_col = np.full(rows, -1, dtype=np.int64)
    rank = 0
    for col in range(ncols):
        if rank == rows:
            break
        w = col >> 6
        mask = ONE << np.uint64(col & 63)
        pivot = -1
        for r in range(rank, rows):
            if (lo[r, w] | hi[r, w]) & mask:
                pivot = r
                break
        if pivot < 0:
            continue
        if pivot != rank:
            for j in range(words):
                lo[pivot, j], lo[rank, j] = lo[rank, j], lo[pivot, j]
                hi[pivot, j], hi[rank, j] = hi[rank, j], hi[pivot, j]
        if hi[rank, w] & mask:
            # scale by 2, i.e. negate: swap the planes
            for j in range(words):
                lo[rank, j], hi[rank, j] = hi[rank, j], lo[rank, j]
        for r in range(rows):
            if r == rank:
                continue
            if lo[r, w] & mask:
                _axpy(lo, hi, r, lo, hi, rank, 2, 3)
            elif hi[r, w] & mask:
                _axpy(lo, hi, r, lo, hi, rank, 1, 3)
        pivot_col[rank] = col
        rank += 1

    rhs_w = ncols >> 6
    rhs_mask = ONE << np.uint64(ncols & 63)
    solution = np.zeros(ncols, dtype=np.int64)
    for r in range(rank, rows):
        if (lo[r, rhs_w] | hi[r, rhs_w]) & rhs_mask:
            return False, solution
    for r in range(rank):
        if lo[r, rhs_w] & rhs_mask:
            solution[pivot_col[r]] = 1
        elif hi[r, rhs_w] & rhs_mask:
            solution[pivot_col[r]] = 2
    return True, solution


# ----------------------------------------------------------------------------
# Structured elimination: weight-one peeling with inactivation
# ----------------------------------------------------------------------------

UNRESOLVED = 0
RESOLVED = 1
INACTIVE = 2


@nb.njit(nogil=True, cache=True)
def sparse_rows(clause_vars, payload, rows, col_of_var, q):
    """
    Merge repeated variables of each equation in `rows`.

    Returns (cols, coefs, rhs): cols[r] lists the distinct columns with a non-zero
    coefficient mod q, padded with -1; coefs[r] holds those coefficients.
    """
    k = clause_vars.shape[1]
    n_rows = rows.shape[0]
    cols = np.full((n_rows, k), -1, dtype=np.int64)
    coefs = np.zeros((n_rows, k), dtype=np.int64)
    rhs = np.empty(n_rows, dtype=np.int64)
    for r in range(n_rows):
        c = rows[r]
        rhs[r] = payload[c] % q
        width = 0
        for j in range(k):
            col = col_of_var[clause_vars[c, j]]
            seen = -1
            for i in range(width):
                if cols[r, i] == col:
                    seen = i
                    break
            if seen >= 0:
                coefs[r, seen] += 1
            else:
                cols[r, width] = col
                coefs[r, width] = 1
                width += 1
        kept = 0
        for i in range(width):
            coef = coefs[r, i] % q
            if coef != 0:
                cols[r, kept] = cols[r, i]
                coefs[r, kept] = coef
                kept += 1
        for i in range(kept, k):
            cols[r, i] = -1
            coefs[r, i] = 0
    return cols, coefs, rhs


@nb.njit(nogil=True, cache=True)
def column_incidence(cols, ncols):
    """CSR incidence of the sparse rows: column c occurs in rows occ[offsets[c]:offsets[c+1]]."""
    n_rows, k = cols.shape
    offsets = np.zeros(ncols + 1, dtype=np.int64)
    for r in range(n_rows):
        for i in range(k):
            if cols[r, i] >= 0:
                offsets[cols[r, i] + 1] += 1
    for c in range(ncols):
        offsets[c + 1] += offsets[c]
    fill = offsets[:-1].copy()
    occ = np.empty(offsets[ncols], dtype=np.int64)
    for r in range(n_rows):
        for i in range(k):
            c = cols[r, i]
            if c >= 0:
                occ[fill[c]] = r
                fill[c] += 1
    return offsets, occ


@nb.njit(nogil=True, cache=True)
def inactivation_schedule(cols, ncols):
    """
    Resolve columns through rows left with a single unresolved column. When no such
    row is left, inactivate the unresolved column that occurs in the most rows.

    A pivot row holds no other unresolved column, so column degrees stay fixed and
    one sort gives the inactivation order.

    Returns:
    --------
    order_col, order_row : resolved columns and their pivot rows, in resolution order
    inactive : inactive columns, in inactivation order
    row_used : uint8, 1 for pivot rows; the other rows form the check system
    """
    n_rows, k = cols.shape
    offsets, occ = column_incidence(cols, ncols)
    state = np.zeros(ncols, dtype=np.int8)
    weight = np.zeros(n_rows, dtype=np.int64)
    row_used = np.zeros(n_rows, dtype=np.uint8)
    ready = np.empty(n_rows * (k + 1) + 1, dtype=np.int64)
    n_ready = 0
    for r in range(n_rows):
        for i in range(k):
            if cols[r, i] >= 0:
                weight[r] += 1
        if weight[r] == 1:
            ready[n_ready] = r
            n_ready += 1
    by_degree = np.argsort(offsets[:-1] - offsets[1:], kind='mergesort')

    order_col = np.empty(ncols, dtype=np.int64)
    order_row = np.empty(ncols, dtype=np.int64)
    inactive = np.empty(ncols, dtype=np.int64)
    n_resolved = 0
    n_inactive = 0
    remaining = ncols
    cursor = 0

    while remaining > 0:
        if n_ready > 0:
            n_ready -= 1
            r = ready[n_ready]
            if row_used[r] == 1 or weight[r] != 1:
                continue
            v = -1
            for i in range(k):
                c = cols[r, i]
                if c >= 0 and state[c] == UNRESOLVED:
                    v = c
                    break
            row_used[r] = 1
            state[v] = RESOLVED
            order_col[n_resolved] = v
            order_row[n_resolved] = r
            n_resolved += 1
        else:
            while state[by_degree[cursor]] != UNRESOLVED:
                cursor += 1
            v = by_degree[cursor]
            state[v] = INACTIVE
            inactive[n_inactive] = v
            n_inactive += 1
        remaining -= 1
        for p in range(offsets[v], offsets[v + 1]):
            r = occ[p]
            if row_used[r] == 0:
                weight[r] -= 1
                if weight[r] == 1:
                    ready[n_ready] = r
                    n_ready += 1

    return order_col[:n_resolved], order_row[:n_resolved], inactive[:n_inactive], row_used


@nb.njit(nogil=True, cache=True)
def _axpy(tlo, thi, target, slo, shi, source, coef, q):
    """Row `target` of (tlo, thi) += coef * row `source` of (slo, shi) over GF(q)."""
    if coef == 0:
        return
    words = tlo.shape[1]
    if q == 2:
        for j in range(words):
            tlo[target, j] ^= slo[source, j]
        return
    for j in range(words):
        a1 = tlo[target, j]
        a2 = thi[target, j]
        if coef == 2:
            b1 = shi[source, j]
            b2 = slo[source, j]
        else:
            b1 = slo[source, j]
            b2 = shi[source, j]
        t = (a1 | b2) ^ (a2 | b1)
        tlo[target, j] = (a2 | b2) ^ t
        thi[target, j] = (a1 | b1) ^ t


@nb.njit(nogil=True, cache=True)
def _entry(lo, hi, r, w, mask):
    if lo[r, w] & mask:
        return 1
    if hi[r, w] & mask:
        return 2
    return 0


@nb.njit(nogil=True, cache=True)
def _set_entry(lo, hi, r, w, mask, value):
    lo[r, w] &= ~mask
    hi[r, w] &= ~mask
    if value == 1:
        lo[r, w] |= mask
    elif value == 2:
        hi[r, w] |= mask


@nb.njit(nogil=True, cache=True)
def check_system(cols, coefs, rhs, ncols, order_col, order_row, inactive, row_used, q):
    """
    Write every column as an affine form in the inactive columns and substitute the
    forms into the rows that were not used as pivots.

    Returns the packed (lo, hi) system over len(inactive) columns, right-hand side in
    the last column, ready for eliminate_gf2 / eliminate_gf3.
    """
    n_rows, k = cols.shape
    n_inactive = inactive.shape[0]
    words = (n_inactive + 1 + WORD_BITS - 1) // WORD_BITS
    const_w = n_inactive >> 6
    const_mask = ONE << np.uint64(n_inactive & 63)

    form_lo = np.zeros((ncols, words), dtype=np.uint64)
    form_hi = np.zeros((ncols, words), dtype=np.uint64)
    for i in range(n_inactive):
        form_lo[inactive[i], i >> 6] |= ONE << np.uint64(i & 63)
    for step in range(order_col.shape[0]):
        v = order_col[step]
        r = order_row[step]
        _set_entry(form_lo, form_hi, v, const_w, const_mask, rhs[r])
        coef_v = 1
        for i in range(k):
            u = cols[r, i]
            if u < 0:
                break
            if u == v:
                coef_v = coefs[r, i]
            else:
                _axpy(form_lo, form_hi, v, form_lo, form_hi, u, q - coefs[r, i], q)
        if coef_v == 2:
            for j in range(words):
                form_lo[v, j], form_hi[v, j] = form_hi[v, j], form_lo[v, j]

    n_check = n_rows - order_row.shape[0]
    lo = np.zeros((n_check, words), dtype=np.uint64)
    hi = np.zeros((n_check, words), dtype=np.uint64)
    row = 0
    for r in range(n_rows):
        if row_used[r] == 1:
            continue
        for i in range(k):
            u = cols[r, i]
            if u < 0:
                break
            _axpy(lo, hi, row, form_lo, form_hi, u, coefs[r, i], q)
        constant = _entry(lo, hi, row, const_w, const_mask)
        _set_entry(lo, hi, row, const_w, const_mask, (rhs[r] - constant) % q)
        row += 1
    return lo, hi


@nb.njit(nogil=True, cache=True)
def substitute(cols, coefs, rhs, ncols, order_col, order_row, inactive, z, q):
    """Fill the resolved columns from the inactive values z, in resolution order."""
    k = cols.shape[1]
    values = np.zeros(ncols, dtype=np.int64)
    for i in range(inactive.shape[0]):
        values[inactive[i]] = z[i]
    for step in range(order_col.shape[0]):
        v = order_col[step]
        r = order_row[step]
        total = rhs[r]
        coef_v = 1
        for i in range(k):
            u = cols[r, i]
            if u < 0:
                break
            if u == v:
                coef_v = coefs[r, i]
            else:
                total -= coefs[r, i] * values[u]
        # 1 and 2 are their own inverses mod 2 and mod 3
        values[v] = (total % q) * coef_v % q
    return values


@nb.njit(nogil=True, cache=True)
def structured_solve(clause_vars, payload, rows, col_of_var, q, ncols):
    """
    Solve the equations `rows` over ncols columns, keeping the dense part to the
    inactive columns.

    Returns (consistent, solution, n_inactive) with free variables set to 0.
    """
    cols, coefs, rhs = sparse_rows(clause_vars, payload, rows, col_of_var, q)
    order_col, order_row, inactive, row_used = inactivation_schedule(cols, ncols)
    lo, hi = check_system(cols, coefs, rhs, ncols, order_col, order_row, inactive, row_used, q)
    n_inactive = inactive.shape[0]
    if q == 2:
        consistent, z = eliminate_gf2(lo, n_inactive)
    else:
        consistent, z = eliminate_gf3(lo, hi, n_inactive)
    if not consistent:
        return False, np.zeros(ncols, dtype=np.int64), n_inactive
    values = substitute(cols, coefs, rhs, ncols, order_col, order_row, inactive, z, q)
    return True, values, n_inactive


@nb.njit(nogil=True, cache=True)
def _propagate(clause_vars, payload, tables, d, offsets, occ, active, values,
               trail, head, tail):
    """
    Process trail entries head..tail, forcing every clause left with a single
    unassigned variable. Returns (ok, tail).
    """
    k = clause_vars.shape[1]
    while head < tail:
        v = trail[head]
        head += 1
        for p in range(offsets[v], offsets[v + 1]):
            c = occ[p]
            if active[c] == 0:
                continue
            free = -1
            n_free = 0
            for j in range(k):
                u = clause_vars[c, j]
                if values[u] < 0 and u != free:
                    if n_free == 0:
                        free = u
                        n_free = 1
                    else:
                        n_free = 2
                        break
            if n_free == 0:
                if not clause_holds(clause_vars, payload, tables, c, values, d):
                    return False, tail
            elif n_free == 1:
                found = -1
                count = 0
                for value in range(d):
                    values[free] = value
                    if clause_holds(clause_vars, payload, tables, c, values, d):
                        found = value
                        count += 1
                values[free] = -1
                if count == 0:
                    return False, tail
                if count == 1:
                    values[free] = found
                    trail[tail] = free
                    tail += 1
    return True, tail


@nb.njit(nogil=True, cache=True)
def search_ue(clause_vars, payload, tables, d, n, active, order, max_nodes):
    """
    Chronological backtracking over the active clauses with unit propagation.

    `order` lists the variables to branch on, most constrained first. Returns
    (status, values, nodes); status is STATUS_SAT, STATUS_UNSAT or STATUS_ABORTED
    when max_nodes decisions were made without an answer.
    """
    offsets, occ = incidence(clause_vars, n)
    values = np.full(n, -1, dtype=np.int64)
    trail = np.empty(n, dtype=np.int64)
    decision_var = np.empty(n, dtype=np.int64)
    decision_value = np.empty(n, dtype=np.int64)
    decision_mark = np.empty(n, dtype=np.int64)
    depth = 0
    tail = 0
    nodes = 0
    cursor = 0

    while True:
        while cursor < order.shape[0] and values[order[cursor]] >= 0:
            cursor += 1
        if cursor == order.shape[0]:
            return STATUS_SAT, values, nodes
        if nodes >= max_nodes:
            return STATUS_ABORTED, values, nodes
        v = order[cursor]
        decision_var[depth] = v
        decision_value[depth] = 0
        decision_mark[depth] = tail
        depth += 1
        nodes += 1
        values[v] = 0
        trail[tail] = v
        ok, tail = _propagate(clause_vars, payload, tables, d, offsets, occ, active,
                              values, trail, tail, tail + 1)
        while not ok:
            if depth == 0:
                return STATUS_UNSAT, values, nodes
            top = depth - 1
            mark = decision_mark[top]
            for i in range(mark, tail):
                values[trail[i]] = -1
            tail = mark
            nxt = decision_value[top] + 1
            if nxt >= d:
                depth -= 1
                continue
            v = decision_var[top]
            decision_value[top] = nxt
            nodes += 1
            values[v] = nxt
            trail[tail] = v
            ok, tail = _propagate(clause_vars, payload, tables, d, offsets, occ, active,
                                  values, trail, tail, tail + 1)
        cursor = 0
