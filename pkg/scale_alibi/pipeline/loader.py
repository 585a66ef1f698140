#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
批次組裝執行緒
Batch Loader

背景執行緒依步數順序組裝批次並放入有界佇列；批次內容只由 (seed, step) 決定，
與執行緒時序無關。
"""

import queue
import logging
import threading
from typing import Callable, Iterator, Optional, Tuple

from pipeline.triplet import TripletBatch

# 設置日誌
logger = logging.getLogger(__name__)

_DONE = object()


class BatchLoader:
    """
    預取批次

    Args:
        make_batch: step → TripletBatch
        start: 起始步 (含)
        stop: 結束步 (不含)
        prefetch: 佇列長度
    """

    def __init__(self, make_batch: Callable[[int], TripletBatch], start: int, stop: int,
                 prefetch: int = 4):
        self.make_batch = make_batch
        self.start = start
        self.stop = stop
        self._queue: 'queue.Queue' = queue.Queue(maxsize=max(1, prefetch))
        self._stop_event = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def _worker(self) -> None:
        try:
            for step in range(self.start, self.stop):
                if self._stop_event.is_set():
                    return
                self._put((step, self.make_batch(step)))
        except BaseException as e:  # 轉交給消費端
            self._put(e)
            return
        self._put(_DONE)

    def _put(self, item) -> None:
        while not self._stop_event.is_set():
            try:
                self._queue.put(item, timeout=0.1)
                return
            except queue.Full:
                continue

    def __iter__(self) -> Iterator[Tuple[int, TripletBatch]]:
        self._thread = threading.Thread(target=self._worker, name='batch-loader', daemon=True)
        self._thread.start()
        try:
            while True:
                item = self._queue.get()
                if item is _DONE:
                    return
                if isinstance(item, BaseException):
                    raise item
                yield item
        finally:
            self.close()

    def close(self) -> None:
        self._stop_event.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None
