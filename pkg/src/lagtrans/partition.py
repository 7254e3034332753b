"""Static division of the particle index space among devices."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class WorkRange:
    """Half-open particle-index interval [start, end) owned by one device."""

    device_id: int
    start: int
    end: int

    @property
    def size(self) -> int:
        return self.end - self.start

    @property
    def slice(self) -> slice:
        return slice(self.start, self.end)

    def overlaps(self, other: "WorkRange") -> bool:
        return max(self.start, other.start) < min(self.end, other.end)


def calc_device_workload_range(n: int, num_devices: int, device_id: int) -> WorkRange:
    """Contiguous block partition with the remainder spread over the first devices.

    base = n // num_devices; the first (n % num_devices) devices get one
    extra particle each.
    """
    if num_devices < 1:
        raise ValueError(f"num_devices must be >= 1, got {num_devices}")
    if not 0 <= device_id < num_devices:
        raise ValueError(f"device_id {device_id} out of range [0, {num_devices})")
    base, rem = divmod(n, num_devices)
    size = base + 1 if device_id < rem else base
    start = device_id * base + min(device_id, rem)
    return WorkRange(device_id=device_id, start=start, end=start + size)


def partition_all(n: int, num_devices: int) -> list[WorkRange]:
    """The full partition, one range per device in ascending device order."""
    return [calc_device_workload_range(n, num_devices, d) for d in range(num_devices)]
