"""Live-object accounting for streaming buffers.

The depth-dimension streaming claim of this package is that the number of
simultaneously alive cost slices, score slices, and recurrent states does
not grow with the number of depth hypotheses.  Rather than argue about it,
the constructors of those types register themselves here and tests assert
on the recorded peak.

CPython refcounting releases a slice as soon as the last reference drops,
so the counter is exact without requiring a gc cycle for the common
(acyclic) case.
"""

from __future__ import annotations

import weakref


class AllocationTracker:
    """Counts currently alive registered objects and the peak so far."""

    def __init__(self) -> None:
        self._live = 0
        self._peak = 0

    def register(self, obj: object) -> None:
        self._live += 1
        if self._live > self._peak:
            self._peak = self._live
        weakref.finalize(obj, self._release)

    def _release(self) -> None:
        self._live -= 1

    @property
    def live(self) -> int:
        return self._live

    @property
    def peak(self) -> int:
        return self._peak

    def reset_peak(self) -> None:
        """Restart peak tracking from the current live count."""
        self._peak = self._live


# Shared tracker for all streaming buffer types (cost slices, score
# slices, recurrent states).  Tests reset the peak, run a stream, and
# compare peaks across stream lengths.
stream_buffers = AllocationTracker()
