"""Counter-based update randomness.

Every chain update is driven by an ``UpdateEvent``: a uniformly chosen site
and an independent uniform in [0, 1).  Events are a pure function of
(seed, role, step), generated from a Philox counter generator, so streams can
be split by role, replayed bit-exactly, and resumed at an arbitrary step
without replaying the prefix.  Event t consumes raw outputs 2t and 2t+1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import Philox

_MASK64 = (1 << 64) - 1
_RAWS_PER_EVENT = 2
_PHILOX_BLOCK = 4  # Philox.advance() counts in blocks of 4 raw outputs

# Stream roles; coupled chains share ROLE_DRIVER by construction.
ROLE_DRIVER = 0
ROLE_INIT = 1


@dataclass(frozen=True)
class UpdateEvent:
    site: tuple[int, int]
    u: float


class UpdateStream:
    """Deterministic stream of (site, uniform) events for an L x m box."""

    def __init__(self, seed: int, L: int, m: int, role: int = ROLE_DRIVER):
        self.seed = int(seed)
        self.role = int(role)
        self.L = L
        self.m = m
        self.n_sites = L * m

    def _bitgen(self, raw_offset: int) -> tuple[Philox, int]:
        key = np.array([self.seed & _MASK64, self.role & _MASK64], dtype=np.uint64)
        bg = Philox(key=key)
        blocks, skip = divmod(raw_offset, _PHILOX_BLOCK)
        if blocks:
            bg.advance(blocks)
        return bg, skip

    def block(self, start: int, count: int) -> tuple[np.ndarray, np.ndarray]:
        """Flat site indices and uniforms for events start .. start+count-1."""
        if count <= 0:
            return np.empty(0, np.int64), np.empty(0, np.float64)
        bg, skip = self._bitgen(_RAWS_PER_EVENT * start)
        raws = bg.random_raw(skip + _RAWS_PER_EVENT * count)[skip:]
        # multiply-shift map; bias is n_sites / 2^32, far below anything we test
        sites = (((raws[0::2] >> np.uint64(32)) * np.uint64(self.n_sites))
                 >> np.uint64(32)).astype(np.int64)
        us = (raws[1::2] >> np.uint64(11)) * 2.0 ** -53
        return sites, us

    def event(self, t: int) -> UpdateEvent:
        sites, us = self.block(t, 1)
        flat = int(sites[0])
        return UpdateEvent(site=(flat // self.m, flat % self.m), u=float(us[0]))

    def events(self, start: int, count: int):
        sites, us = self.block(start, count)
        for flat, u in zip(sites.tolist(), us.tolist()):
            yield UpdateEvent(site=(flat // self.m, flat % self.m), u=float(u))
