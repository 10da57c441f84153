"""Shared LRU cache of computed flow fields keyed by (source, target, params digest).

Results through the cache are bit-identical to direct computation; a key being
computed by one worker blocks duplicate computation of the same key
(single-flight), and hit/miss counters stay exact under concurrency.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass

from .flow import FlowField, FlowParams, compute_flow
from .videocore import VideoSequence


@dataclass(frozen=True)
class FlowKey:
    source_index: int
    target_index: int
    params_hash: str

    @classmethod
    def for_pair(cls, source: int, target: int, params: FlowParams) -> "FlowKey":
        return cls(source, target, params.digest())


class _Inflight:
    __slots__ = ("event", "result", "error")

    def __init__(self):
        self.event = threading.Event()
        self.result = None
        self.error = None


class FlowCache:
    """LRU cache; capacity counts stored fields."""

    def __init__(self, capacity: int = 64):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._store: OrderedDict[FlowKey, FlowField] = OrderedDict()
        self._inflight: dict[FlowKey, _Inflight] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get_or_compute(
        self, key: FlowKey, seq: VideoSequence, params: FlowParams = FlowParams()
    ) -> FlowField:
        """Return the cached field for `key`, computing (once) on a miss."""
        n = len(seq)
        if not (0 <= key.source_index < n and 0 <= key.target_index < n):
            raise IndexError(
                f"flow pair ({key.source_index}, {key.target_index}) out of range for {n} frames"
            )
        while True:
            with self._lock:
                cached = self._store.get(key)
                if cached is not None:
                    self._store.move_to_end(key)
                    self.hits += 1
                    return cached
                pending = self._inflight.get(key)
                if pending is None:
                    pending = _Inflight()
                    self._inflight[key] = pending
                    self.misses += 1
                    leader = True
                else:
                    self.hits += 1
                    leader = False
            if not leader:
                pending.event.wait()
                if pending.error is not None:
                    raise pending.error
                return pending.result
            try:
                field = compute_flow(seq[key.source_index], seq[key.target_index], params)
            except BaseException as exc:
                with self._lock:
                    del self._inflight[key]
                pending.error = exc
                pending.event.set()
                raise
            with self._lock:
                self._store[key] = field
                self._store.move_to_end(key)
                while len(self._store) > self.capacity:
                    self._store.popitem(last=False)
                del self._inflight[key]
            pending.result = field
            pending.event.set()
            return field

    def flow(self, seq: VideoSequence, source: int, target: int, params: FlowParams) -> FlowField:
        return self.get_or_compute(FlowKey.for_pair(source, target, params), seq, params)

    def stats(self) -> dict:
        with self._lock:
            return {"hits": self.hits, "misses": self.misses, "size": len(self._store)}

    def clear(self) -> None:
        with self._lock:
            self._store.clear()
            self.hits = 0
            self.misses = 0
