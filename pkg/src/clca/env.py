"""Seeded i.i.d. random environment: channel gains, harvest and grid price.

Draws are counter based.  Every (slot, stream) pair owns a fixed block of
Philox output, so the environment seen at slot ``t`` depends only on the seed
and ``t``.  Runs that share a seed therefore see the same channel, harvest and
price trajectory regardless of V, algorithm, or how many slots are drawn at
once.
"""

from dataclasses import dataclass

import numpy as np

CHANNEL, HARVEST, PRICE = 0, 1, 2


@dataclass(frozen=True)
class EnvState:
    """One slot of randomness.

    ``s_channel[n, m]`` is the gain from transmitter ``n`` to receiver ``m``
    (zero on the diagonal).  ``s_harvest`` is zero for nodes that cannot
    harvest.  ``s_price`` is drawn for every node; only grid-powered nodes ever
    pay it.
    """

    s_channel: np.ndarray
    s_harvest: np.ndarray
    s_price: np.ndarray


def price(s_grid, g=0.0):
    """Cost per unit of grid energy; constant in the purchased amount ``g``."""
    return s_grid


def _block_len(k):
    # Philox emits 4 words per counter step; pad each slot's block to that
    return -(-k // 4) * 4


class EnvSampler:
    """Counter-based sampler with an internal chunk cache.

    ``sampler(t)`` returns the :class:`EnvState` for slot ``t``.  Chunked
    generation is only a speed-up: the values equal those of a sampler that
    draws one slot at a time.
    """

    def __init__(self, model, seed, chunk=2048):
        self.model = model
        self.seed = int(seed)
        self.chunk = int(chunk)
        p = model.params
        n = model.n_nodes
        d = np.asarray(model.distance, dtype=float)
        with np.errstate(divide="ignore"):
            path_loss = np.where(d > 0, d ** -4.0, 0.0)
        self._path_loss = path_loss
        self._harvest_mask = np.asarray(model.harvests, dtype=float)
        self._sc = (p.S_C_min, p.S_C_max - p.S_C_min)
        self._sg = (p.S_G_min, p.S_G_max - p.S_G_min)
        self._h = p.h_max
        self._sizes = {CHANNEL: n * n, HARVEST: n, PRICE: n}
        self._cache_start = None
        self._cache = None

    def _uniform_block(self, stream, t0, count):
        k = self._sizes[stream]
        width = _block_len(k)
        bitgen = np.random.Philox(key=self.seed, counter=[0, 0, stream, 0])
        bitgen.advance(t0 * width // 4)
        u = np.random.Generator(bitgen).random(count * width)
        return u.reshape(count, width)[:, :k]

    def block(self, t0, count):
        """Arrays ``(channel[c, N, N], harvest[c, N], price[c, N])`` for slots ``t0 .. t0+c-1``."""
        n = self.model.n_nodes
        uc = self._uniform_block(CHANNEL, t0, count).reshape(count, n, n)
        uh = self._uniform_block(HARVEST, t0, count)
        ug = self._uniform_block(PRICE, t0, count)
        channel = (self._sc[0] + self._sc[1] * uc) * self._path_loss
        harvest = self._h * uh * self._harvest_mask
        grid = self._sg[0] + self._sg[1] * ug
        return channel, harvest, grid

    def _fill(self, t0):
        self._cache = self.block(t0, self.chunk)
        self._cache_start = t0

    def __call__(self, t):
        t = int(t)
        if t < 0:
            raise ValueError("slot index must be non-negative")
        if self._cache_start is None or not (
            self._cache_start <= t < self._cache_start + self.chunk
        ):
            self._fill(t - t % self.chunk)
        i = t - self._cache_start
        ch, hv, gr = self._cache
        return EnvState(ch[i], hv[i], gr[i])


def sample_env(rng, model, t):
    """EnvState for slot ``t``; ``rng`` is an :class:`EnvSampler` or an integer seed."""
    if not isinstance(rng, EnvSampler):
        rng = EnvSampler(model, rng, chunk=1)
    return rng(t)
