"""Fractional-delay Lagrange interpolation.

Applies a per-sample, possibly time-varying delay to a sequence. Used to
model writer position shift in the channel, to build delayed bits for the
equalizer/target training branch, and (at order 1) inside the detection
trellis where the cascade of interpolator and target forms a time-varying
target.

Conventions
-----------
Delays are in units of the sample period T. A delay ``tau = m + mu``
(``m = floor(tau)``, ``mu in [0, 1)``) evaluates ``x`` at position
``k - tau`` by weighting the samples ``x[k - m - node]`` over the kernel's
integer nodes:

* order 1: nodes ``{0, 1}``
* order 3: nodes ``{-1, 0, 1, 2}``

``taps(mu)`` are the Lagrange basis polynomials on those nodes evaluated at
``mu``, so ``taps(0)`` is the unit impulse and the taps always sum to 1.
Out-of-range sample indices read as zero.
"""

import numpy as np

SUPPORTED_ORDERS = (1, 3)


def kernel_nodes(order: int) -> np.ndarray:
    """Integer node offsets of the interpolation kernel."""
    if order == 1:
        return np.array([0, 1])
    if order == 3:
        return np.array([-1, 0, 1, 2])
    raise ValueError(f"unsupported interpolation order {order}; use one of {SUPPORTED_ORDERS}")


def lagrange_taps(mu, order: int = 3) -> np.ndarray:
    """Lagrange interpolation taps for fractional part ``mu``.

    Parameters
    ----------
    mu : float or ndarray
        Fractional delay in ``[0, 1)``; arrays are broadcast, producing a
        trailing taps axis of length ``order + 1``.
    order : int
        Kernel order, 1 (linear) or 3 (cubic).

    Returns
    -------
    ndarray of shape ``mu.shape + (order + 1,)``, taps ordered by node.
    """
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < 0.0) or np.any(mu >= 1.0):
        raise ValueError("fractional part mu must lie in [0, 1)")
    if order == 1:
        taps = np.stack([1.0 - mu, mu], axis=-1)
    elif order == 3:
        taps = np.stack(
            [
                -mu * (mu - 1.0) * (mu - 2.0) / 6.0,
                (mu + 1.0) * (mu - 1.0) * (mu - 2.0) / 2.0,
                -(mu + 1.0) * mu * (mu - 2.0) / 2.0,
                (mu + 1.0) * mu * (mu - 1.0) / 6.0,
            ],
            axis=-1,
        )
    else:
        raise ValueError(f"unsupported interpolation order {order}; use one of {SUPPORTED_ORDERS}")
    # exact identity at mu == 0 (kill the -0.0 artifacts of the product form)
    taps = taps + 0.0
    return taps


def delay_sequence(x, delays, order: int = 3) -> np.ndarray:
    """Apply a per-sample delay ``delays[k]`` (units of T) to sequence ``x``.

    ``y[k]`` interpolates ``x`` at position ``k - delays[k]``; integer and
    fractional parts of the delay are handled jointly and indices outside
    the sequence read as zero.
    """
    x = np.asarray(x, dtype=float)
    delays = np.asarray(delays, dtype=float)
    if x.ndim != 1 or delays.ndim != 1:
        raise ValueError("x and delays must be one-dimensional")
    if x.shape != delays.shape:
        raise ValueError(f"length mismatch: len(x)={x.shape[0]}, len(delays)={delays.shape[0]}")
    if not np.all(np.isfinite(delays)):
        raise ValueError("delays must be finite")

    n = x.shape[0]
    m = np.floor(delays).astype(int)
    mu = delays - m
    taps = lagrange_taps(mu, order)          # (n, order+1)
    nodes = kernel_nodes(order)

    idx = np.arange(n)[:, None] - m[:, None] - nodes[None, :]
    valid = (idx >= 0) & (idx < n)
    xpad = np.concatenate([x, [0.0]])
    gathered = xpad[np.where(valid, idx, n)]
    return np.einsum("ki,ki->k", taps, gathered)
