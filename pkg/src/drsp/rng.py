"""Counter-addressed random streams.

Every random draw in drsp comes from a numpy ``Generator`` over the
Philox4x64-10 bit generator, addressed by ``(seed, stream_id, counter)``:

* ``key = [seed, stream_id]`` (two unsigned 64-bit words),
* ``counter = [0, 0, counter, 0]`` (the low words stay free for the
  generator's own increments within one draw).

Stream ids are ``(purpose << 32) | index``, so agent ``i``'s sample stream
at iteration ``k`` is ``stream(seed, SAMPLES, i, k)``. Any implementation of
Philox4x64-10 plus numpy's distribution algorithms reproduces the draws.
"""

import numpy as np

INSTANCE = 1
INIT = 2
SAMPLES = 3
EVAL_POOL = 4
TOPOLOGY = 5
DIAGNOSTICS = 6

_MASK64 = (1 << 64) - 1


def stream_id(purpose, index=0):
    return ((int(purpose) << 32) | int(index)) & _MASK64


def stream(seed, purpose, index=0, counter=0):
    """Return a fresh Generator for the addressed stream."""
    key = np.array([int(seed) & _MASK64, stream_id(purpose, index)], dtype=np.uint64)
    ctr = np.array([0, 0, int(counter) & _MASK64, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=ctr))
