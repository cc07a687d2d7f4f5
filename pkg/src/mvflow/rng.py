"""Counter-based random number substreams.

Every stochastic routine in this package draws from a Philox generator
keyed by ``(seed, path_id)`` with the 256-bit counter offset by a stream
tag.  Two consequences the rest of the code relies on:

* Bitwise determinism independent of scheduling: path ``i`` always sees
  the same numbers no matter how paths are grouped into blocks or
  threads.
* Common random numbers: two solver calls with the same ``(seed,
  stream)`` consume identical noise, so comparing their outputs isolates
  systematic differences from resampling noise.

Stream tags below ``2**32`` are reserved for solver windows (window
``w`` uses stream ``w``); tags at ``2**32`` and above are fixed
single-purpose streams.
"""

from __future__ import annotations

import numpy as np

# Reserved stream tags.  Window indices 0, 1, 2, ... occupy the low range.
STREAM_FINAL = 2**32        # decoupled final run in solve_mvsde
STREAM_SAMPLE = 2**32 + 1   # standalone sample_initial draws
STREAM_PROBE = 2**32 + 2    # coefficient validation probes
STREAM_FLOWS = 2**32 + 3    # parametric flow families in experiments
STREAM_PARTICLES = 2**33    # particle-system ladder runs (one tag per rung)


def substream(seed: int, path_id: int, stream: int = 0) -> np.random.Generator:
    """Generator for one path's private substream.

    The key is ``(seed, path_id)`` and the stream tag sits in the second
    counter word, so distinct tags never overlap (each tag has 2**64
    blocks of headroom).
    """
    if seed < 0 or path_id < 0 or stream < 0:
        raise ValueError("seed, path_id and stream must be nonnegative")
    key = np.array([seed, path_id], dtype=np.uint64)
    counter = np.array([0, stream, 0, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))
