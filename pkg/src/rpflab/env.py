"""Random environments: seeded two-sided symbol streams over a finite alphabet.

Every random cocycle in this package is driven by a stationary ergodic
environment.  Concretely, an environment is a law on two-sided sequences
``(omega_j)_{j in Z}`` of symbols from a finite alphabet ``{0, ..., S-1}``,
together with the left shift.  This module realizes finite windows of such
sequences reproducibly from an integer seed:

* :class:`EnvModel` describes the law — i.i.d. with given marginal, or a
  stationary Markov chain with given transition matrix.
* :class:`EnvPath` is one sampled window ``omega_{-n_past}, ...,
  omega_{n_future}`` with an origin; shifting the origin re-indexes the same
  realization, it never re-draws randomness.
* :func:`sample_path` materializes a path from ``(model, seed, window)``.
  Sampling is window-extension stable: enlarging the window (same model and
  seed) reproduces the old symbols bit-for-bit on the common indices.
* :func:`phi_mixing_profile` computes the uniform-mixing coefficients of the
  symbol process, used to certify that an environment mixes fast enough for
  the limit theorems downstream.

Reading a symbol outside the sampled window raises
:class:`~rpflab.errors.OutOfWindowError` instead of silently extending the
stream, so results never depend on the order in which windows were queried.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, OutOfWindowError

__all__ = [
    "EnvModel",
    "EnvPath",
    "MixingProfile",
    "sample_path",
    "shift",
    "phi_mixing_profile",
]

_LAWS = ("iid", "markov")

# SeedSequence spawn tags for the two independent half-streams of a path.
# Forward covers indices 0, 1, 2, ...; backward covers -1, -2, ....  Keeping
# the halves on separate streams is what makes window extension stable: each
# half is a prefix of a fixed infinite uniform stream.
_FORWARD_TAG = 1
_BACKWARD_TAG = 2


def _as_prob_vector(p, size: int, what: str) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (size,):
        raise ConfigError(f"{what} must have shape ({size},), got {p.shape}")
    if np.any(p < 0) or not np.isfinite(p).all():
        raise ConfigError(f"{what} must be finite and nonnegative")
    total = p.sum()
    if not np.isclose(total, 1.0, rtol=0, atol=1e-12):
        raise ConfigError(f"{what} must sum to 1 (got {total!r})")
    return p / total


def _stationary_distribution(transition: np.ndarray) -> np.ndarray:
    """Stationary row vector of a row-stochastic matrix via least squares."""
    size = transition.shape[0]
    a = np.vstack([transition.T - np.eye(size), np.ones((1, size))])
    b = np.zeros(size + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    total = pi.sum()
    if total <= 0:
        raise ConfigError("transition matrix has no stationary distribution")
    return pi / total


class EnvModel:
    """Law of the symbol process driving a random cocycle.

    Parameters
    ----------
    alphabet_size : int
        Number of symbols ``S >= 1``; symbols are ``0 .. S-1``.
    law : {"iid", "markov"}
        Joint law of the two-sided sequence.
    probs : array_like of shape (S,), optional
        Marginal for the i.i.d. law.  Defaults to uniform.  Ignored for
        ``law="markov"``.
    transition : array_like of shape (S, S), optional
        Row-stochastic transition matrix, required when ``law="markov"``.
        The chain is run in its stationary regime; the stationary
        distribution is computed at construction.

    Attributes
    ----------
    stationary : numpy.ndarray
        Marginal law of each symbol: ``probs`` for i.i.d., the stationary
        distribution for Markov.
    """

    def __init__(self, alphabet_size: int, law: str = "iid",
                 probs=None, transition=None) -> None:
        if not isinstance(alphabet_size, (int, np.integer)) or alphabet_size < 1:
            raise ConfigError(f"alphabet_size must be a positive int, got {alphabet_size!r}")
        if law not in _LAWS:
            raise ConfigError(f"law must be one of {_LAWS}, got {law!r}")
        self.alphabet_size = int(alphabet_size)
        self.law = law

        if law == "iid":
            if transition is not None:
                raise ConfigError("transition is only meaningful for law='markov'")
            if probs is None:
                probs = np.full(self.alphabet_size, 1.0 / self.alphabet_size)
            self.probs = _as_prob_vector(probs, self.alphabet_size, "probs")
            self.transition = None
            self.stationary = self.probs
        else:
            if probs is not None:
                raise ConfigError("probs is only meaningful for law='iid'")
            if transition is None:
                raise ConfigError("law='markov' requires a transition matrix")
            t = np.asarray(transition, dtype=float)
            s = self.alphabet_size
            if t.shape != (s, s):
                raise ConfigError(f"transition must have shape ({s}, {s}), got {t.shape}")
            for i in range(s):
                t[i] = _as_prob_vector(t[i], s, f"transition row {i}")
            self.probs = None
            self.transition = t
            self.stationary = _stationary_distribution(t)

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return (f"EnvModel(alphabet_size={self.alphabet_size}, law={self.law!r})")


class EnvPath:
    """One sampled window of an environment, with a movable origin.

    A path holds symbols for indices ``-n_past .. n_future`` (inclusive)
    relative to its origin.  :meth:`shift` moves the origin along the same
    realization; it never re-draws randomness, so ``path.shift(k).shift(-k)``
    restricted to the common window equals ``path``.

    Instances are created by :func:`sample_path`; the constructor is internal.
    """

    def __init__(self, model: EnvModel, seed: int, n_past: int, n_future: int,
                 symbols: np.ndarray, origin: int) -> None:
        self.model = model
        self.seed = seed
        self.n_past = int(n_past)
        self.n_future = int(n_future)
        self._symbols = symbols
        self._origin = int(origin)

    @property
    def window(self) -> tuple[int, int]:
        """Inclusive index range ``(-n_past, n_future)`` around the origin."""
        return (-self.n_past, self.n_future)

    def _check(self, j: int) -> None:
        if j < -self.n_past or j > self.n_future:
            raise OutOfWindowError(
                f"symbol index {j} outside window [{-self.n_past}, {self.n_future}]; "
                f"re-sample the path with a larger window")

    def symbol(self, j: int) -> int:
        """Symbol at index ``j`` relative to the origin (``j`` may be negative)."""
        self._check(int(j))
        return int(self._symbols[self._origin + int(j)])

    def symbols_slice(self, start: int, stop: int) -> np.ndarray:
        """Symbols at indices ``start, ..., stop - 1`` relative to the origin."""
        start, stop = int(start), int(stop)
        if stop < start:
            raise ConfigError(f"empty-or-negative slice [{start}, {stop})")
        if start < -self.n_past:
            self._check(start)
        if stop - 1 > self.n_future:
            self._check(stop - 1)
        return self._symbols[self._origin + start: self._origin + stop]

    def shift(self, k: int) -> "EnvPath":
        """Re-index the same realization with the origin moved by ``k``.

        The new path sees symbol ``j`` where the old one saw ``j + k``; its
        window shrinks accordingly.  Shifting outside the sampled window is
        an error.
        """
        k = int(k)
        self._check(k)
        return EnvPath(self.model, self.seed,
                       n_past=self.n_past + k, n_future=self.n_future - k,
                       symbols=self._symbols, origin=self._origin + k)

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return (f"EnvPath(seed={self.seed}, window=[{-self.n_past}, "
                f"{self.n_future}], law={self.model.law!r})")


def _inverse_cdf(cumulative: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Map uniforms in [0, 1) to symbols via the cumulative distribution."""
    return np.searchsorted(cumulative, uniforms, side="right").astype(np.int64)


def sample_path(model: EnvModel, seed: int, n_past: int, n_future: int) -> EnvPath:
    """Draw one environment window ``omega_{-n_past} .. omega_{n_future}``.

    Parameters
    ----------
    model : EnvModel
    seed : int
        Nonnegative integer seed.  Equal ``(model, seed)`` give the same
        two-sided realization: enlarging either side of the window preserves
        all previously visible symbols bit-for-bit.
    n_past, n_future : int
        Nonnegative window extents.  The path holds ``n_past + n_future + 1``
        symbols.

    Returns
    -------
    EnvPath
    """
    if n_past < 0 or n_future < 0:
        raise ConfigError(f"window extents must be >= 0, got ({n_past}, {n_future})")
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
    n_past, n_future = int(n_past), int(n_future)

    rng_fwd = np.random.default_rng(np.random.SeedSequence([int(seed), _FORWARD_TAG]))
    rng_bwd = np.random.default_rng(np.random.SeedSequence([int(seed), _BACKWARD_TAG]))
    u_fwd = rng_fwd.random(n_future + 1)   # indices 0 .. n_future
    u_bwd = rng_bwd.random(n_past)         # indices -1, -2, .. -n_past

    symbols = np.empty(n_past + n_future + 1, dtype=np.int64)
    origin = n_past

    if model.law == "iid":
        cum = np.cumsum(model.probs)
        symbols[origin:] = _inverse_cdf(cum, u_fwd)
        if n_past:
            symbols[:origin] = _inverse_cdf(cum, u_bwd)[::-1]
    else:
        trans = model.transition
        pi = model.stationary
        cum_rows = np.cumsum(trans, axis=1)
        # Time reversal of the stationary chain generates the past half.
        with np.errstate(divide="ignore", invalid="ignore"):
            rev = np.where(pi[:, None] > 0, (trans.T * pi[None, :]) / pi[:, None], 0.0)
        row_sums = rev.sum(axis=1)
        rev[row_sums > 0] /= row_sums[row_sums > 0, None]
        cum_rev = np.cumsum(rev, axis=1)

        state = int(_inverse_cdf(np.cumsum(pi), u_fwd[:1])[0])
        symbols[origin] = state
        cur = state
        for j in range(1, n_future + 1):
            cur = int(_inverse_cdf(cum_rows[cur], u_fwd[j:j + 1])[0])
            symbols[origin + j] = cur
        cur = state
        for j in range(1, n_past + 1):
            cur = int(_inverse_cdf(cum_rev[cur], u_bwd[j - 1:j])[0])
            symbols[origin - j] = cur

    return EnvPath(model, int(seed), n_past, n_future, symbols, origin)


def shift(path: EnvPath, k: int) -> EnvPath:
    """Functional form of :meth:`EnvPath.shift`."""
    return path.shift(k)


class MixingProfile:
    """Uniform-mixing coefficients of a symbol process.

    Attributes
    ----------
    values : numpy.ndarray of shape (n_max + 1,)
        ``values[n]`` bounds the uniform (phi-)mixing coefficient at lag
        ``n``; ``values[0] = 1`` by convention.  For the laws implemented
        here the bound at each lag ``n >= 1`` is exact.
    summable : bool
        Whether the profile is summable (geometric decay detected, or
        identically zero beyond lag 0).
    rate : float or None
        Fitted geometric decay rate, or None when no decay is detectable.
    """

    def __init__(self, values: np.ndarray, summable: bool, rate: float | None) -> None:
        self.values = values
        self.summable = summable
        self.rate = rate

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return (f"MixingProfile(n_max={len(self.values) - 1}, "
                f"summable={self.summable}, rate={self.rate})")


def phi_mixing_profile(model: EnvModel, n_max: int) -> MixingProfile:
    """Uniform-mixing coefficients of the environment up to lag ``n_max``.

    For an i.i.d. law the coefficients vanish at every positive lag.  For a
    stationary Markov chain the coefficient at lag ``n`` equals the largest
    total-variation distance between an ``n``-step transition row and the
    stationary distribution, which is computed exactly by iterating the
    transition matrix.

    Parameters
    ----------
    model : EnvModel
    n_max : int
        Largest lag to evaluate (``>= 1``).

    Returns
    -------
    MixingProfile
    """
    if n_max < 1:
        raise ConfigError(f"n_max must be >= 1, got {n_max}")
    values = np.zeros(n_max + 1)
    values[0] = 1.0

    if model.law == "markov":
        pi = model.stationary
        power = model.transition.copy()
        for n in range(1, n_max + 1):
            values[n] = 0.5 * np.abs(power - pi[None, :]).sum(axis=1).max()
            if n < n_max:
                power = power @ model.transition

    positive = values[1:][values[1:] > 1e-300]
    if positive.size == 0:
        return MixingProfile(values, summable=True, rate=0.0)
    if positive.size >= 2 and values[n_max] > 1e-300 and values[n_max - 1] > 1e-300:
        rate = float(values[n_max] / values[n_max - 1])
    else:
        rate = None
    summable = rate is not None and rate < 1.0 - 1e-9
    # All mass may already have decayed below floor before n_max.
    if values[n_max] <= 1e-300:
        summable = True
    return MixingProfile(values, summable=summable, rate=rate)
