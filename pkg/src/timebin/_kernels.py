"""Sequential event-stream kernels, jit-compiled.

Every kernel walks its inputs exactly once, so runtime is linear in the
event count and auxiliary state is a handful of scalars (plus one slot per
pixel). Inputs must already be sorted by time; callers enforce that.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def pixel_deadtime_mask(times, pixels, n_pixels, dead, paralyzable):
    """Accept/reject mask for a multi-pixel counter with per-pixel dead time.

    Nonparalyzable pixels re-arm a fixed dead time after each accepted
    event; paralyzable pixels restart it on every arrival, accepted or not.
    """
    n = times.size
    keep = np.empty(n, dtype=np.bool_)
    # last relevant time per pixel; -inf so the first hit always lands
    last = np.full(n_pixels, -np.inf)
    for k in range(n):
        p = pixels[k]
        t = times[k]
        ok = (t - last[p]) >= dead
        keep[k] = ok
        if paralyzable or ok:
            last[p] = t
    return keep


@njit(cache=True, nogil=True)
def channel_deadtime_mask(times, dead, paralyzable):
    """Single-channel variant of pixel_deadtime_mask (integer or float times)."""
    n = times.size
    keep = np.empty(n, dtype=np.bool_)
    if n == 0:
        return keep
    keep[0] = True
    last = times[0]
    for k in range(1, n):
        t = times[k]
        ok = (t - last) >= dead
        keep[k] = ok
        if paralyzable or ok:
            last = t
    return keep


@njit(cache=True, nogil=True)
def merge_window_mask(times, window):
    """Drop every event closer than `window` to the previously kept one.

    Models a pulse-combiner output line that cannot resolve back-to-back
    pulses; the first pulse of each cluster is the one that survives.
    """
    n = times.size
    keep = np.empty(n, dtype=np.bool_)
    if n == 0:
        return keep
    last = times[0]
    keep[0] = True
    for k in range(1, n):
        if times[k] - last < window:
            keep[k] = False
        else:
            keep[k] = True
            last = times[k]
    return keep


@njit(cache=True, nogil=True)
def count_slot_matches(a, b, offset):
    """Min-paired matches between two sorted slot-index arrays.

    A slot holding ca events in `a` and cb events in `b` (after adding
    `offset` to b's indices) contributes min(ca, cb). Single forward pass.
    """
    na = a.size
    nb = b.size
    i = 0
    j = 0
    total = 0
    while i < na and j < nb:
        av = a[i]
        bv = b[j] + offset
        if av == bv:
            ra = i + 1
            while ra < na and a[ra] == av:
                ra += 1
            rb = j + 1
            while rb < nb and b[rb] + offset == bv:
                rb += 1
            ca = ra - i
            cb = rb - j
            total += ca if ca < cb else cb
            i = ra
            j = rb
        elif av < bv:
            i += 1
        else:
            j += 1
    return total
