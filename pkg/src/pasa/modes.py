from __future__ import annotations

import enum


class CompensationMode(str, enum.Enum):
    """How key blocks outside the selected set contribute to a query row."""

    HARD_DROP = "HardDrop"
    ZEROTH_ORDER = "ZerothOrder"
    FIRST_ORDER_GLOBAL = "FirstOrderGlobal"
    FIRST_ORDER_GROUPED = "FirstOrderGrouped"
    FIRST_ORDER_PER_BLOCK = "FirstOrderPerBlock"

    @classmethod
    def parse(cls, value) -> "CompensationMode":
        if isinstance(value, cls):
            return value
        key = str(value).strip()
        for m in cls:
            if key.lower() in (m.value.lower(), m.name.lower()):
                return m
        raise ValueError(f"unknown compensation mode {value!r}")

    @property
    def uses_unselected(self) -> bool:
        return self is not CompensationMode.HARD_DROP

    @property
    def first_order(self) -> bool:
        return self in (
            CompensationMode.FIRST_ORDER_GLOBAL,
            CompensationMode.FIRST_ORDER_GROUPED,
            CompensationMode.FIRST_ORDER_PER_BLOCK,
        )


ALL_MODES = tuple(CompensationMode)
