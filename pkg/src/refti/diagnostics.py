"""Convergence diagnostics: split R-hat, effective sample size, batch-means MCSE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from refti.errors import InvalidArgumentError

RHAT_GATE = 1.05


@dataclass
class Diagnostics:
    rhat: np.ndarray
    ess: np.ndarray
    zero_variance: np.ndarray

    @property
    def max_rhat(self) -> float:
        return float(np.max(self.rhat))

    def converged(self, gate: float = RHAT_GATE) -> bool:
        return bool(np.all(self.rhat <= gate))


def _as_chain_array(draws) -> np.ndarray:
    x = np.asarray(draws, dtype=float)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise InvalidArgumentError("draws must have shape (chains, iterations[, dim])")
    return x


def split_rhat(draws) -> tuple:
    """Split-chain potential scale reduction per dimension.

    Returns ``(rhat, zero_variance)``. Dimensions where every draw is
    identical get ``rhat = 1`` and are flagged in ``zero_variance``.
    """
    x = _as_chain_array(draws)
    m, n, d = x.shape
    if m < 2:
        raise InvalidArgumentError("R-hat needs at least 2 chains")
    if n < 4:
        raise InvalidArgumentError("R-hat needs at least 4 draws per chain")
    half = n // 2
    split = np.concatenate([x[:, :half], x[:, n - half:]], axis=0)
    nn = half
    means = split.mean(axis=1)
    W = split.var(axis=1, ddof=1).mean(axis=0)
    B = nn * means.var(axis=0, ddof=1)
    var_plus = (nn - 1) / nn * W + B / nn
    rhat = np.empty(d)
    zero = np.zeros(d, dtype=bool)
    for j in range(d):
        if W[j] <= 0.0:
            if B[j] <= 0.0:
                rhat[j] = 1.0
                zero[j] = True
            else:
                rhat[j] = np.inf
        else:
            rhat[j] = np.sqrt(var_plus[j] / W[j])
    return rhat, zero


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.size
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    ac = np.fft.irfft(f * np.conj(f), size)[:n]
    return ac / n


def ess(draws) -> np.ndarray:
    """Multi-chain effective sample size (Geyer initial monotone sequence)."""
    x = _as_chain_array(draws)
    m, n, d = x.shape
    out = np.empty(d)
    for j in range(d):
        chains = x[:, :, j]
        if np.all(chains == chains.flat[0]):
            out[j] = float(m * n)
            continue
        acov = np.array([_autocov(c) for c in chains])
        chain_var = acov[:, 0] * n / (n - 1.0)
        W = chain_var.mean()
        var_plus = W * (n - 1.0) / n
        if m > 1:
            var_plus += chains.mean(axis=1).var(ddof=1)
        if var_plus <= 0:
            out[j] = float(m * n)
            continue
        rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
        rho[0] = 1.0
        # Geyer: sum consecutive pairs while positive, enforce monotone decrease
        total = 0.0
        prev = np.inf
        t = 0
        while t + 1 < n:
            pair = rho[t] + rho[t + 1]
            if pair < 0:
                break
            pair = min(pair, prev)
            total += pair
            prev = pair
            t += 2
        tau = -1.0 + 2.0 * total
        tau = max(tau, 1.0 / np.log10(m * n + 10))
        out[j] = m * n / tau
    return out


def compute_diagnostics(draws) -> Diagnostics:
    r, z = split_rhat(draws)
    return Diagnostics(rhat=r, ess=ess(draws), zero_variance=z)


def batch_means_mcse(values) -> float:
    """Monte-Carlo standard error of the mean by non-overlapping batch means.

    ``values`` is ``(chains, iterations)`` (or 1-D for a single chain).
    Each chain of length N is cut into ``floor(sqrt(N))`` batches.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[None, :]
    m, n = v.shape
    if n < 1:
        raise InvalidArgumentError("need at least one draw")
    nb = max(int(np.floor(np.sqrt(n))), 1)
    size = n // nb
    if nb < 2 and m < 2:
        return float(np.std(v, ddof=0) / np.sqrt(v.size))
    bm = v[:, : nb * size].reshape(m, nb, size).mean(axis=2).ravel()
    if bm.size < 2:
        return 0.0
    return float(np.std(bm, ddof=1) / np.sqrt(bm.size))
