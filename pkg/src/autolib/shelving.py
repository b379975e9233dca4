"""Shelf geometry and slot assignment.

Shelves are racks of levels; each level is a row of grabber-delimited slots
with a fixed pitch (grabber spacing). A book fits a level only when its
width plus a safety clearance stays within the pitch, which is why lower
levels get the wider pitches. Assignment places each book as close as
possible to where its sort key says it belongs, measured in occupied slots
passed over ("displacement"), without ever shuffling already-shelved books.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .catalog import ShelfAddress
from .errors import LibraryError


class NoEligibleLevel(LibraryError):
    code = "NoEligibleLevel"


class ShelfFull(LibraryError):
    code = "ShelfFull"


class EmptySlot(LibraryError):
    code = "EmptySlot"


class DoubleOccupancy(LibraryError):
    code = "DoubleOccupancy"


@dataclass(frozen=True)
class LevelSpec:
    pitch_mm: int
    slot_count: int

    def __post_init__(self):
        if self.pitch_mm <= 0:
            raise LibraryError("pitch_mm must be positive")
        if self.slot_count <= 0:
            raise LibraryError("slot_count must be positive")


@dataclass(frozen=True)
class LevelReport:
    rack: int
    level: int
    pitch_mm: int
    capacity: int
    used: int

    @property
    def fill_ratio(self) -> float:
        return self.used / self.capacity


class ShelfMap:
    """Racks x levels x slots plus live occupancy.

    Racks are numbered from 1; levels from 0 at the bottom. Within a rack,
    pitch must not increase with level (wide slots live low). Occupancy is
    a bijection between addresses and barcodes; the sort key of each
    occupant is kept so later insertions know the shelf order.
    """

    def __init__(self, racks: Sequence[Sequence[LevelSpec]], clearance_mm: int = 10):
        if clearance_mm <= 0:
            raise LibraryError("clearance_mm must be positive")
        if not racks or any(not levels for levels in racks):
            raise LibraryError("need at least one rack, each with at least one level")
        for levels in racks:
            for low, high in zip(levels, levels[1:]):
                if low.pitch_mm < high.pitch_mm:
                    raise LibraryError("pitch must not increase with level")
        self.racks = [list(levels) for levels in racks]
        self.clearance_mm = clearance_mm
        self._books: dict[ShelfAddress, tuple[str, str]] = {}  # addr -> (barcode, key)
        self._by_barcode: dict[str, ShelfAddress] = {}
        self.flagged: set[ShelfAddress] = set()  # slots awaiting manual handling

    @property
    def rack_numbers(self) -> list[int]:
        return list(range(1, len(self.racks) + 1))

    @property
    def occupancy(self) -> dict[ShelfAddress, str]:
        return {addr: barcode for addr, (barcode, _key) in self._books.items()}

    def level_spec(self, rack: int, level: int) -> LevelSpec:
        return self.racks[rack - 1][level]

    def contains_address(self, addr: ShelfAddress) -> bool:
        return (
            1 <= addr.rack <= len(self.racks)
            and 0 <= addr.level < len(self.racks[addr.rack - 1])
            and 0 <= addr.slot < self.racks[addr.rack - 1][addr.level].slot_count
        )

    def occupant(self, addr: ShelfAddress) -> Optional[str]:
        entry = self._books.get(addr)
        return entry[0] if entry else None

    def address_of(self, barcode: str) -> Optional[ShelfAddress]:
        return self._by_barcode.get(barcode)

    def fits(self, width_mm: int, rack: int, level: int) -> bool:
        return width_mm + self.clearance_mm <= self.level_spec(rack, level).pitch_mm

    def eligible_levels(self, width_mm: int) -> list[tuple[int, int]]:
        """(rack, level) pairs wide enough for the book, in global scan
        order: rack ascending, then level ascending."""
        if width_mm < 1:
            raise LibraryError("width_mm must be >= 1")
        out = []
        for rack in self.rack_numbers:
            for level in range(len(self.racks[rack - 1])):
                if self.fits(width_mm, rack, level):
                    out.append((rack, level))
        return out

    def eligible_slots(self, eligible: Sequence[tuple[int, int]]) -> list[ShelfAddress]:
        """Global ordering of all slots on the given levels: rack asc,
        level asc, slot asc."""
        slots = []
        for rack, level in eligible:
            for slot in range(self.level_spec(rack, level).slot_count):
                slots.append(ShelfAddress(rack, level, slot))
        return slots

    def ideal_insertion_point(
        self, key: str, eligible: Sequence[tuple[int, int]]
    ) -> int:
        """Index into the global eligible-slot ordering where the key belongs.

        The returned gap index i keeps occupied keys <= key before it and
        >= key after it whenever the occupancy is key-ordered; if past
        assignments left the shelf locally out of order, it is the earliest
        index minimizing the number of order violations.
        """
        slots = self.eligible_slots(eligible)
        occupied = [(i, self._books[a][1]) for i, a in enumerate(slots) if a in self._books]
        # violations(0) counts occupants that would sit after the gap with a
        # smaller key; sweeping the gap right past an occupant adjusts by +-1.
        violations = sum(1 for _i, k in occupied if k < key)
        best_index, best_violations = 0, violations
        occ_iter = iter(occupied)
        nxt = next(occ_iter, None)
        for gap in range(1, len(slots) + 1):
            if nxt is not None and nxt[0] == gap - 1:
                if nxt[1] < key:
                    violations -= 1
                elif nxt[1] > key:
                    violations += 1
                nxt = next(occ_iter, None)
            if violations < best_violations:
                best_index, best_violations = gap, violations
        return best_index

    def assign_slot(self, barcode: str, width_mm: int, key: str) -> ShelfAddress:
        """Pick the free eligible slot minimizing displacement from the ideal
        insertion point; ties prefer the slot at/after the point, then the
        lower global index. Updates occupancy atomically."""
        if barcode in self._by_barcode:
            raise DoubleOccupancy(f"{barcode} already shelved at {self._by_barcode[barcode]}")
        eligible = self.eligible_levels(width_mm)
        if not eligible:
            raise NoEligibleLevel(f"width {width_mm} mm fits no level")
        slots = self.eligible_slots(eligible)
        free = [i for i, a in enumerate(slots) if a not in self._books and a not in self.flagged]
        if not free:
            raise ShelfFull(f"no free slot for width {width_mm} mm")
        ideal = self.ideal_insertion_point(key, eligible)

        occupied_prefix = [0] * (len(slots) + 1)
        for i, addr in enumerate(slots):
            occupied_prefix[i + 1] = occupied_prefix[i] + (1 if addr in self._books else 0)

        def displacement(index: int) -> int:
            if index >= ideal:
                return occupied_prefix[index] - occupied_prefix[ideal]
            return occupied_prefix[ideal] - occupied_prefix[index + 1]

        chosen = min(free, key=lambda i: (displacement(i), i < ideal, i))
        addr = slots[chosen]
        self._books[addr] = (barcode, key)
        self._by_barcode[barcode] = addr
        return addr

    def place(self, addr: ShelfAddress, barcode: str, key: str, width_mm: int) -> None:
        """Occupy a specific address (catalog restore path). Enforces the
        width-safety invariant and the occupancy bijection."""
        if not self.contains_address(addr):
            raise LibraryError(f"address {addr} out of bounds")
        if addr in self._books:
            raise DoubleOccupancy(f"{addr} already holds {self._books[addr][0]}")
        if barcode in self._by_barcode:
            raise DoubleOccupancy(f"{barcode} already at {self._by_barcode[barcode]}")
        if not self.fits(width_mm, addr.rack, addr.level):
            raise NoEligibleLevel(f"width {width_mm} mm violates pitch at {addr}")
        self._books[addr] = (barcode, key)
        self._by_barcode[barcode] = addr

    def release_slot(self, addr: ShelfAddress) -> str:
        if addr not in self._books:
            raise EmptySlot(str(addr))
        barcode, _key = self._books.pop(addr)
        del self._by_barcode[barcode]
        self.flagged.discard(addr)
        return barcode

    def flag_slot(self, addr: ShelfAddress) -> None:
        """Mark a slot (and whatever sits in it) for manual handling; it is
        skipped by assignment until an operator clears it."""
        self.flagged.add(addr)

    def occupancy_report(self) -> list[LevelReport]:
        used: dict[tuple[int, int], int] = {}
        for addr in self._books:
            used[(addr.rack, addr.level)] = used.get((addr.rack, addr.level), 0) + 1
        out = []
        for rack in self.rack_numbers:
            for level, spec in enumerate(self.racks[rack - 1]):
                out.append(
                    LevelReport(
                        rack=rack,
                        level=level,
                        pitch_mm=spec.pitch_mm,
                        capacity=spec.slot_count,
                        used=used.get((rack, level), 0),
                    )
                )
        return out

    @classmethod
    def from_layout(cls, doc: dict) -> "ShelfMap":
        racks = [
            [LevelSpec(int(lv["pitch_mm"]), int(lv["slot_count"])) for lv in rack["levels"]]
            for rack in doc["racks"]
        ]
        return cls(racks, clearance_mm=int(doc.get("clearance_mm", 10)))
