"""Independent reference computations shared by the test modules."""

import numpy as np

from scanadapt.mrimodel import apply_mask


def dft_matrix(n):
    """Unitary centered DFT matrix (DC at index n//2)."""
    k = np.arange(n) - n // 2
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def dense_encoding(smaps, mask):
    """Explicit matrix of the masked operator x -> M F S x, image raveled row-major."""
    nc, h, w = smaps.shape
    f = np.kron(dft_matrix(h), dft_matrix(w))
    keep = np.tile(mask.as_array(), h)
    return np.vstack([keep[:, None] * (f * s.ravel()[None, :]) for s in smaps])


def dense_tikhonov(kspace, smaps, mask, lam):
    """Solve (E^H E + lam I) x = E^H y directly."""
    e = dense_encoding(smaps, mask)
    y = apply_mask(kspace, mask).reshape(-1)
    n = e.shape[1]
    x = np.linalg.solve(e.conj().T @ e + lam * np.eye(n), e.conj().T @ y)
    return x.reshape(smaps.shape[1:])
