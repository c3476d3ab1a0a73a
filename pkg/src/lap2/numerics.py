"""Log-space primitives shared by the accountants.

All quantities here live on the natural-log scale. ``-inf`` stands for an
exact zero and ``+inf`` for an overflowed (infeasible) value; NaN is never
produced for valid inputs.
"""

import math

import numpy as np
from scipy.special import gammaln, xlog1py, xlogy

from lap2.errors import DomainError


def log_sum_exp(terms, axis=None):
    """Computes ``log(sum(exp(terms)))`` without intermediate overflow.

    Args:
        terms: Array-like of log values. ``-inf`` entries contribute nothing and
            any ``+inf`` entry makes the result ``+inf``.
        axis: Axis to reduce over. ``None`` reduces over all entries.

    Returns:
        A float (``axis=None``) or an array of reduced values. An empty
        reduction returns ``-inf``.
    """
    a = np.asarray(terms, dtype=float)
    if a.size == 0:
        if axis is None:
            return -math.inf
        shape = list(a.shape)
        del shape[axis]
        return np.full(shape, -np.inf)
    m = np.max(a, axis=axis, keepdims=True)
    # Rows that are all -inf or contain +inf need no shifting.
    shift = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(under="ignore", invalid="ignore"):
        s = np.sum(np.exp(a - shift), axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        out = np.log(s) + shift
    out = np.where(np.isposinf(m), np.inf, out)
    out = np.where(np.isneginf(m), -np.inf, out)
    out = np.squeeze(out, axis=axis) if axis is not None else out.reshape(())
    return float(out) if out.ndim == 0 else out


def log_binomial(m, k):
    """Log of the binomial coefficient ``C(m, k)`` via log-gamma."""
    m_arr = np.asarray(m)
    k_arr = np.asarray(k)
    if np.any(k_arr < 0) or np.any(m_arr < 0) or np.any(k_arr > m_arr):
        raise DomainError(f"log_binomial requires 0 <= k <= m, got m={m}, k={k}")
    out = gammaln(m_arr + 1.0) - gammaln(k_arr + 1.0) - gammaln(m_arr - k_arr + 1.0)
    # C(m, 0) = C(m, m) = 1 exactly.
    out = np.where((k_arr == 0) | (k_arr == m_arr), 0.0, out)
    return float(out) if out.ndim == 0 else out


def log_subsample_weight(lam, eta, zeta):
    """Log of ``C(lam+1, eta) (1-zeta)^(lam+1-eta) zeta^eta``.

    The endpoints ``zeta = 0`` and ``zeta = 1`` are exact: vanishing factors
    give ``-inf`` and ``0^0`` is taken as 1.
    """
    if not 0.0 <= zeta <= 1.0:
        raise DomainError(f"sampling rate must lie in [0, 1], got {zeta}")
    lam_arr = np.asarray(lam)
    eta_arr = np.asarray(eta)
    if np.any(lam_arr < 0) or np.any(eta_arr < 0) or np.any(eta_arr > lam_arr + 1):
        raise DomainError(f"need 0 <= eta <= lam + 1, got lam={lam}, eta={eta}")
    m = lam_arr + 1
    with np.errstate(divide="ignore"):
        out = (log_binomial(m, eta_arr)
               + xlog1py(m - eta_arr, -zeta)
               + xlogy(eta_arr, zeta))
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


def log_expm1(x):
    """Stable ``log(exp(x) - 1)`` for ``x >= 0`` (``-inf`` at zero)."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        small = np.log(np.expm1(np.minimum(x, 30.0)))
        large = x + np.log1p(-np.exp(-np.maximum(x, 30.0)))
    out = np.where(x > 30.0, large, small)
    return float(out) if out.ndim == 0 else out


_LOG_FACT = np.zeros(1)


def _log_factorials(n):
    """Table of ``log(k!)`` for ``k = 0..n`` (grown on demand, shared)."""
    global _LOG_FACT
    if _LOG_FACT.size <= n:
        _LOG_FACT = gammaln(np.arange(max(n + 1, 2 * _LOG_FACT.size)) + 1.0)
    return _LOG_FACT


def log_subsample_weight_matrix(m, eta, zeta):
    """``log C(m, eta) (1-zeta)^(m-eta) zeta^eta`` on the grid ``m x eta``.

    Entries with ``eta > m`` are ``-inf``. Unlike log_subsample_weight this
    takes ``m = lam + 1`` directly and skips argument validation.
    """
    m = np.asarray(m, dtype=np.int64)
    eta = np.asarray(eta, dtype=np.int64)
    top = max(int(m.max()) if m.size else 0, int(eta.max()) if eta.size else 0)
    lf = _log_factorials(top)
    diff = m[:, None] - eta[None, :]
    valid = diff >= 0
    diff = np.where(valid, diff, 0)
    if zeta > 0:
        eta_part = eta * math.log(zeta)
    else:
        eta_part = np.where(eta == 0, 0.0, -np.inf)
    if zeta < 1:
        rest_part = diff * math.log1p(-zeta)
    else:
        rest_part = np.where(diff == 0, 0.0, -np.inf)
    with np.errstate(invalid="ignore"):
        w = lf[m][:, None] - lf[eta][None, :] - lf[diff] + eta_part[None, :] + rest_part
    return np.where(valid, w, -np.inf)


_BLOCK = 16


class SubsampleWeights:
    """Binomial subsampling weights for one rate and a fixed set of ``m``.

    Evaluates ``log sum_{eta=2}^{k} w(m, eta) exp(t_eta)`` for every row
    ``m`` at once, for any log-term vector ``t``. Columns are grouped in
    blocks of 16; each block stores ``exp(log w - shift)`` with its own
    per-row shift, so the sum is a batch of matrix-vector products that
    neither overflows nor silently loses a dominant term.
    """

    def __init__(self, zeta, m):
        self.zeta = float(zeta)
        self.m = np.asarray(m, dtype=np.int64)
        self._scaled = np.zeros((0, self.m.size, _BLOCK))
        self._shift = np.zeros((0, self.m.size))
        self._flat = np.zeros((self.m.size, 0))
        self._flat_shift = np.zeros(self.m.size)
        self._direct = {}

    def _blocks(self, nb):
        if nb > self._scaled.shape[0]:
            cols = np.arange(2, 2 + nb * _BLOCK)
            log_w = log_subsample_weight_matrix(self.m, cols, self.zeta)
            log_w = log_w.reshape(self.m.size, nb, _BLOCK).transpose(1, 0, 2)
            shift = np.max(log_w, axis=2)
            finite = np.where(np.isfinite(shift), shift, 0.0)
            with np.errstate(under="ignore"):
                self._scaled = np.ascontiguousarray(np.exp(log_w - finite[:, :, None]))
            # Blocks with no admissible eta keep a -inf shift so they never
            # look like a lost contribution.
            self._shift = shift
        return self._scaled[:nb], self._shift[:nb]

    def _flat_weights(self, k):
        if self._flat.shape[1] < k - 1:
            log_w = log_subsample_weight_matrix(self.m, np.arange(2, k + 1), self.zeta)
            shift = np.max(log_w, axis=1)
            finite = np.where(np.isfinite(shift), shift, 0.0)
            with np.errstate(under="ignore"):
                self._flat = np.exp(log_w - finite[:, None])
            self._flat_shift = shift
        return self._flat[:, : k - 1], self._flat_shift

    def log_weighted_sum(self, log_terms):
        """``log sum_eta w(m, eta) exp(log_terms[eta - 2])`` per row.

        Args:
            log_terms: Log values for ``eta = 2, 3, ..., k`` (finite or
                -inf), either a vector or a ``(k - 1, R)`` matrix holding R
                independent term vectors as columns.

        Returns:
            Array of shape ``(len(m),)`` or ``(len(m), R)``.
        """
        log_terms = np.asarray(log_terms, dtype=float)
        vector = log_terms.ndim == 1
        if vector:
            log_terms = log_terms[:, None]
        k = log_terms.shape[0] + 1
        n_cols = log_terms.shape[1]
        if k < 2:
            total = np.full((self.m.size, n_cols), -np.inf)
            return total[:, 0] if vector else total
        # Fast path: one shift per row and one per column. Entries whose
        # result lands far below the shifts may have lost every term to
        # underflow and are recomputed blockwise.
        flat, flat_shift = self._flat_weights(k)
        col_top = np.max(log_terms, axis=0)
        col_top = np.where(np.isfinite(col_top), col_top, 0.0)
        with np.errstate(under="ignore", divide="ignore", over="ignore"):
            total = (np.log(flat @ np.exp(log_terms - col_top[None, :]))
                     + flat_shift[:, None] + col_top[None, :])
        suspect = np.any(total < flat_shift[:, None] + col_top[None, :] - 600.0, axis=0)
        if np.any(suspect):
            cols = np.flatnonzero(suspect)
            total[:, cols] = self._blocked_sum(log_terms[:, cols])
        return total[:, 0] if vector else total

    def log_weighted_sum_direct(self, log_terms, chunk=256):
        """Same as log_weighted_sum for one term vector, fully in log space.

        Slower per entry but immune to any spread of the terms, which suits
        rapidly growing terms such as a Gaussian kernel.
        """
        log_terms = np.asarray(log_terms, dtype=float)
        out = np.full(self.m.shape, -np.inf)
        for start in range(0, self.m.size, chunk):
            rows = self.m[start:start + chunk]
            k = min(int(rows.max()), log_terms.size + 1)
            if k < 2:
                continue
            key = (start, chunk, k)
            log_w = self._direct.get(key)
            if log_w is None:
                log_w = log_subsample_weight_matrix(rows, np.arange(2, k + 1), self.zeta)
                # Small blocks are reused across calls (noise searches revisit them).
                if log_w.size <= 1 << 18:
                    self._direct[key] = log_w
            out[start:start + chunk] = log_sum_exp(log_w + log_terms[None, : k - 1], axis=1)
        return out

    def _blocked_sum(self, log_terms):
        k = log_terms.shape[0] + 1
        n_cols = log_terms.shape[1]
        nb = -(-(k - 1) // _BLOCK)
        scaled, shift = self._blocks(nb)
        padded = np.full((nb * _BLOCK, n_cols), -np.inf)
        padded[: k - 1] = log_terms
        padded = padded.reshape(nb, _BLOCK, n_cols)
        top = np.max(padded, axis=1)
        top = np.where(np.isfinite(top), top, 0.0)
        with np.errstate(under="ignore", divide="ignore", over="ignore"):
            vec = np.exp(padded - top[:, None, :])
            block = np.log(scaled @ vec) + shift[:, :, None] + top[:, None, :]
        total = log_sum_exp(block, axis=0)
        # A block whose dominant term sits far below its shifts may have
        # underflowed; if it could still matter, redo that entry in log space.
        ceiling = shift[:, :, None] + top[:, None, :] + math.log(_BLOCK)
        risky = np.any((block < ceiling - 600.0) & (ceiling > total[None] - 40.0), axis=0)
        if np.any(risky):
            rows = np.flatnonzero(np.any(risky, axis=1))
            log_w = log_subsample_weight_matrix(self.m[rows], np.arange(2, k + 1), self.zeta)
            for j in np.flatnonzero(np.any(risky, axis=0)):
                sel = rows[risky[rows, j]]
                total[sel, j] = log_sum_exp(log_w[risky[rows, j]] + log_terms[None, :, j], axis=1)
        return total


_WEIGHT_CACHE: dict = {}


def subsample_weights(zeta, m) -> SubsampleWeights:
    """Cached SubsampleWeights for ``(zeta, m)``; safe to share across calls."""
    m = np.asarray(m, dtype=np.int64)
    key = (float(zeta), m.size, hash(m.tobytes()))
    table = _WEIGHT_CACHE.get(key)
    if table is None:
        if len(_WEIGHT_CACHE) >= 4:
            _WEIGHT_CACHE.clear()
        table = _WEIGHT_CACHE[key] = SubsampleWeights(zeta, m)
    return table
