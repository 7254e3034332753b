"""Simulated multi-device offload runtime.

Each "device" is a worker context with a private, deep-copied image of
the full model state. Compute happens on the image; results return to
the host only through range-restricted copy-back, so concurrent devices
never write overlapping host memory.
"""

from __future__ import annotations

import os
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model_state import CacheState, ClimData, Control, MeteoField, ParticleEnsemble, deep_copy
from .partition import WorkRange
from .rng import RandomBatch

MAX_DEVICES = 64

REGION_FIELDS = ("ctl", "ens", "cache", "clim", "met0", "met1", "dt", "batch")


class LifecycleError(RuntimeError):
    """Illegal data-region state transition or post-delete access."""


class DeviceTaskError(RuntimeError):
    """One or more device tasks failed; maps device id to its exception."""

    def __init__(self, failures: dict[int, BaseException]):
        self.failures = failures
        details = "; ".join(f"device {d}: {e!r}" for d, e in sorted(failures.items()))
        super().__init__(f"device task failure(s): {details}")


def available_devices() -> int:
    """Simulated-device capacity of this host (its execution-unit count)."""
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def enumerate_devices(requested: int, available: int | None = None) -> int:
    """Resolve a device-count request; negative means all available."""
    if requested == 0:
        raise ValueError("device count 0 is invalid (negative means all available)")
    if available is None:
        available = available_devices()
    if requested < 0:
        return min(available, MAX_DEVICES)
    return min(requested, MAX_DEVICES)


@dataclass
class ModelImage:
    """The full model state as one bundle, the unit a data region holds."""

    ctl: Control
    ens: ParticleEnsemble
    cache: CacheState
    clim: ClimData
    met0: MeteoField
    met1: MeteoField
    dt: np.ndarray
    batch: RandomBatch


@dataclass
class DeviceRegion:
    """One device's private memory image with an explicit lifecycle."""

    device_id: int
    state: str = "empty"  # empty -> created -> populated -> deleted
    image: ModelImage | None = None
    work_range: WorkRange | None = None

    def _check_live(self, op: str) -> None:
        if self.state == "deleted":
            raise LifecycleError(f"{op} on deleted region of device {self.device_id}")
        if self.state == "empty":
            raise LifecycleError(f"{op} before create on device {self.device_id}")


class DevicePool:
    """A fixed set of simulated devices, each backed by one worker thread.

    Tasks dispatched to a device run on its thread in submission order;
    distinct devices run concurrently.
    """

    def __init__(self, num_devices: int, debug: bool = False):
        if num_devices < 1:
            raise ValueError(f"num_devices must be >= 1, got {num_devices}")
        self.num_devices = num_devices
        self.debug = debug
        self._executors = [ThreadPoolExecutor(max_workers=1,
                                              thread_name_prefix=f"device{d}")
                           for d in range(num_devices)]
        self._pending: list[list[Future]] = [[] for _ in range(num_devices)]
        self._regions: dict[int, DeviceRegion] = {}

    # -- dispatch ---------------------------------------------------------

    def _check_device_id(self, device_id: int) -> None:
        if not 0 <= device_id < self.num_devices:
            raise ValueError(f"device_id {device_id} out of range "
                             f"[0, {self.num_devices})")

    def dispatch(self, device_id: int, fn) -> Future:
        """Queue fn() on the device's worker; returns its future."""
        self._check_device_id(device_id)
        fut = self._executors[device_id].submit(fn)
        pending = self._pending[device_id]
        pending.append(fut)
        if len(pending) > 64:
            self._pending[device_id] = [f for f in pending if not f.done()]
        return fut

    def busy(self, device_id: int) -> bool:
        return any(not f.done() for f in self._pending[device_id])

    def device_wait(self, device_id: int) -> None:
        """Block until every task dispatched to this device has completed."""
        self._check_device_id(device_id)
        for fut in self._pending[device_id]:
            try:
                fut.result()
            except BaseException:
                pass  # failures surface via for_each_device_parallel / caller
        self._pending[device_id] = []

    def for_each_device_parallel(self, task, parallel: bool = True) -> None:
        """Run task(device_id) once per device.

        Parallel mode dispatches to every device's worker and joins; the
        sequential fallback runs the same tasks in a plain loop. Failures
        are collected and reported per device id after all tasks finish.
        """
        failures: dict[int, BaseException] = {}
        if parallel:
            futures = [self.dispatch(d, lambda d=d: task(d))
                       for d in range(self.num_devices)]
            for d, fut in enumerate(futures):
                try:
                    fut.result()
                except BaseException as exc:
                    failures[d] = exc
            for d in range(self.num_devices):
                self._pending[d] = []
        else:
            for d in range(self.num_devices):
                try:
                    task(d)
                except BaseException as exc:
                    failures[d] = exc
        if failures:
            raise DeviceTaskError(failures)

    # -- data-region lifecycle -------------------------------------------

    def region_create(self, device_id: int, host: ModelImage,
                      work_range: WorkRange | None = None) -> DeviceRegion:
        """Allocate a device-private image (content unspecified until the
        first update_device)."""
        self._check_device_id(device_id)
        live = self._regions.get(device_id)
        if live is not None and live.state in ("created", "populated"):
            raise LifecycleError(f"device {device_id} already has a live region")
        region = DeviceRegion(device_id=device_id, state="created",
                              image=deep_copy(host), work_range=work_range)
        self._regions[device_id] = region
        return region

    def region_update_device(self, region: DeviceRegion, host: ModelImage,
                             fields) -> None:
        """Deep-copy the named host fields into the device image."""
        region._check_live("update_device")
        for name in fields:
            if name not in REGION_FIELDS:
                raise ValueError(f"unknown region field {name!r}")
            setattr(region.image, name, deep_copy(getattr(host, name)))
        region.state = "populated"

    def region_update_host(self, region: DeviceRegion, host: ModelImage,
                           work: WorkRange) -> None:
        """Copy the device's owned ensemble/cache slices back to the host.

        Host bytes outside [work.start, work.end) are untouched.
        """
        region._check_live("update_host")
        if region.state != "populated":
            raise LifecycleError(f"update_host on unpopulated region of "
                                 f"device {region.device_id}")
        if self.debug:
            if region.work_range is not None and (work.start, work.end) != \
                    (region.work_range.start, region.work_range.end):
                raise LifecycleError(
                    f"device {region.device_id} copy-back range "
                    f"[{work.start}, {work.end}) is not its own range "
                    f"[{region.work_range.start}, {region.work_range.end})")
            for other in self._regions.values():
                if other is region or other.work_range is None:
                    continue
                if work.overlaps(other.work_range):
                    raise LifecycleError(
                        f"copy-back range of device {region.device_id} overlaps "
                        f"device {other.device_id}'s range")
        s = work.slice
        img = region.image
        host.ens.np = img.ens.np
        for name in ("time", "p", "zeta", "lon", "lat"):
            getattr(host.ens, name)[s] = getattr(img.ens, name)[s]
        host.ens.q[:, s] = img.ens.q[:, s]
        host.cache.uvwp[:, s] = img.cache.uvwp[:, s]
        host.cache.iso_var[s] = img.cache.iso_var[s]

    def region_delete(self, region: DeviceRegion) -> None:
        """Release the image; requires the device to be idle."""
        if region.state == "deleted":
            raise LifecycleError(f"double delete on device {region.device_id}")
        region._check_live("delete")
        if self.busy(region.device_id):
            raise LifecycleError(f"delete with in-flight task on device "
                                 f"{region.device_id}")
        region.image = None
        region.state = "deleted"

    def region(self, device_id: int) -> DeviceRegion:
        return self._regions[device_id]

    def shutdown(self) -> None:
        for ex in self._executors:
            ex.shutdown(wait=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()
        return False
