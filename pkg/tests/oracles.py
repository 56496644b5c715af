"""Independent brute-force oracles. None of these call into the code paths they check."""

from __future__ import annotations

import math
import statistics

import numpy as np


def fixations_by_enumeration(samples, threshold, min_duration):
    """Enumerate every window of every valid run, then apply the greedy maximality rule.

    Returns [(first_index, last_index, start_ms, duration_ms, cx, cy)].
    """
    runs, cur = [], []
    for i, s in enumerate(samples):
        if s.valid:
            cur.append(i)
        elif cur:
            runs.append(cur)
            cur = []
    if cur:
        runs.append(cur)

    out = []
    for run in runs:
        xs = np.array([samples[i].x for i in run])
        ys = np.array([samples[i].y for i in run])
        ts = np.array([samples[i].timestamp_ms for i in run])
        n = len(run)
        # ok[i, j]: window run[i..j] is within the dispersion limit on both axes
        ok = np.zeros((n, n), dtype=bool)
        for i in range(n):
            dx = np.maximum.accumulate(xs[i:]) - np.minimum.accumulate(xs[i:])
            dy = np.maximum.accumulate(ys[i:]) - np.minimum.accumulate(ys[i:])
            ok[i, i:] = (dx <= threshold) & (dy <= threshold)
        i = 0
        while i < n:
            js = np.flatnonzero(ok[i])
            j = int(js.max())
            if ts[j] - ts[i] >= min_duration:
                out.append((run[i], run[j], float(ts[i]), float(ts[j] - ts[i]),
                            float(np.mean(xs[i:j + 1])), float(np.mean(ys[i:j + 1]))))
                i = j + 1
            else:
                i += 1
    return out


def sorted_rank(counts):
    """Selection-sort style ranking: repeatedly take the largest count, lowest index first."""
    remaining = list(range(len(counts)))
    order = []
    while remaining:
        best = remaining[0]
        for c in remaining[1:]:
            if counts[c] > counts[best]:
                best = c
        order.append(best)
        remaining.remove(best)
    return order


class MsReplay:
    """Millisecond-by-millisecond replay of a session with integer timestamps.

    Builds the state at every integer millisecond directly from the raw
    samples, stimulus (appear, disappear) pairs and fixation intervals.
    """

    def __init__(self, samples, fixations):
        self.samples = samples
        self.fixations = fixations
        diffs = [b.timestamp_ms - a.timestamp_ms for a, b in zip(samples, samples[1:])]
        tail = statistics.median(diffs) if diffs else 0
        self.t0 = int(samples[0].timestamp_ms)
        self.t_end = samples[-1].timestamp_ms + tail
        n_ms = int(math.ceil(self.t_end)) - self.t0
        # index of the sample holding gaze at each millisecond (-1 outside the session)
        self.active = np.full(max(n_ms, 0), -1, dtype=int)
        for i, s in enumerate(samples):
            lo = int(s.timestamp_ms) - self.t0
            hi = (int(samples[i + 1].timestamp_ms) if i + 1 < len(samples) else int(math.ceil(self.t_end))) - self.t0
            if hi > lo:
                self.active[lo:hi] = i  # later samples with equal start overwrite earlier ones

    def _slice(self, lo, hi):
        """Array offsets for the integer milliseconds m with lo <= m < hi."""
        a = max(int(math.ceil(lo)) - self.t0, 0)
        b = min(int(math.ceil(hi)) - self.t0, len(self.active))
        return a, max(a, b)

    def contact_mask(self, aoi):
        """mask[k] is True when a fixation centred in ``aoi`` covers millisecond t0 + k."""
        mask = np.zeros(len(self.active) + 1, dtype=bool)
        for f in self.fixations:
            if aoi.contains(f.centroid_x, f.centroid_y):
                lo = int(math.ceil(f.start_ms)) - self.t0
                hi = int(math.floor(f.start_ms + f.duration_ms)) - self.t0
                if hi >= lo:
                    mask[max(lo, 0):hi + 1] = True
        return mask[:len(self.active)]

    def first_contact(self, aoi, lo, hi):
        a, b = self._slice(lo, hi)
        hits = np.flatnonzero(self.contact_mask(aoi)[a:b])
        return int(self.t0 + a + hits[0]) if len(hits) else None

    def anticipated(self, aoi, appear_ms, window_ms):
        a, b = self._slice(appear_ms - window_ms, appear_ms)
        for k in range(a, b):
            idx = self.active[k]
            if idx < 0:
                continue
            s = self.samples[idx]
            if s.valid and not s.offscreen and aoi.contains(s.x, s.y):
                return True
        return False

    def focus_loss(self, visible, aois, threshold):
        """visible: list of (start, end) half-open intervals."""
        off_sample = np.array([not (s.valid and not s.offscreen and any(a.contains(s.x, s.y) for a in aois))
                               for s in self.samples] + [False])
        off = off_sample[self.active]  # index -1 maps to the trailing False
        vis = np.zeros(len(self.active), dtype=bool)
        for lo, hi in visible:
            a, b = self._slice(lo, hi)
            vis[a:b] = True
        flag = off & vis
        episodes, run_start = [], None
        for k, on in enumerate(list(flag) + [False]):
            if on and run_start is None:
                run_start = k
            elif not on and run_start is not None:
                if k - run_start >= threshold:
                    episodes.append((self.t0 + run_start, k - run_start))
                run_start = None
        return episodes
