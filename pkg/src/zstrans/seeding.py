"""Counter-based seed derivation.

All stochastic choices in the project (batch draws, noise vectors,
penalty mixing coefficients, per-sample render jitter) take a seed
derived here from the run seed plus a structural path such as
(iteration, purpose-tag).  Because no stateful generator threads
through the code, resuming a run at iteration k reproduces the exact
random stream of an uninterrupted run.
"""

from __future__ import annotations

import hashlib


def derive_seed(base: int, *parts) -> int:
    """Map (base seed, path parts) to a 63-bit seed, stable across runs."""
    msg = ":".join([str(base), *(str(p) for p in parts)]).encode("utf-8")
    digest = hashlib.sha256(msg).digest()
    return int.from_bytes(digest[:8], "little") >> 1
