"""Min-cost bipartite assignment with a per-pair cost gate."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import NumericalError


def solve_assignment(
    cost: np.ndarray, cost_limit: float = np.inf
) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Solve a gated min-cost assignment.

    Pairs with cost >= cost_limit can never match. Among the remaining
    pairs the solver minimizes sum(matched costs) - n_matches * cost_limit,
    so any pair cheaper than the gate is worth matching over leaving its
    row and column unpaired. With an infinite limit this is the classic
    assignment problem (min total cost over maximum matchings).

    Returns (matches, unmatched_rows, unmatched_cols); matches are
    (row, col) pairs sorted by row. NaN or infinite costs raise.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {cost.shape}")
    if cost.size and not np.isfinite(cost).all():
        raise NumericalError("cost matrix contains NaN or infinite entries")
    rows, cols = cost.shape
    if rows == 0 or cols == 0:
        return [], list(range(rows)), list(range(cols))

    if not np.isfinite(cost_limit):
        rr, cc = linear_sum_assignment(cost)
        matches = [(int(r), int(c)) for r, c in zip(rr, cc)]
    else:
        # lapjv-style augmentation: a virtual partner priced at limit/2 per
        # side means matching a real pair pays off exactly when its cost
        # beats the limit. The big sentinel must dominate any achievable
        # total so gated pairs and cross-virtual cells are never picked.
        n = rows + cols
        span = max(1.0, abs(cost_limit), float(np.abs(cost).max()))
        big = span * (n + 1) * 4.0
        full = np.full((n, n), big, dtype=np.float64)
        full[:rows, :cols] = np.where(cost < cost_limit, cost, big)
        full[np.arange(rows), cols + np.arange(rows)] = cost_limit / 2.0
        full[rows + np.arange(cols), np.arange(cols)] = cost_limit / 2.0
        full[rows:, cols:] = 0.0
        rr, cc = linear_sum_assignment(full)
        matches = [
            (int(r), int(c))
            for r, c in zip(rr, cc)
            if r < rows and c < cols and cost[r, c] < cost_limit
        ]

    matched_rows = {r for r, _ in matches}
    matched_cols = {c for _, c in matches}
    unmatched_rows = [r for r in range(rows) if r not in matched_rows]
    unmatched_cols = [c for c in range(cols) if c not in matched_cols]
    return sorted(matches), unmatched_rows, unmatched_cols
