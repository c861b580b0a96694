from __future__ import annotations

import math
from typing import Iterator, Sequence, TypeVar


T = TypeVar("T")


def chunked(sequence: Sequence[T], size: int) -> Iterator[Sequence[T]]:
    """將序列切分為固定大小區塊。"""

    if size <= 0:
        raise ValueError("size 必須為正整數")
    for index in range(0, len(sequence), size):
        yield sequence[index : index + size]


def format_number(value: float) -> str:
    """輸出可逆的最短數字字串。"""

    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"無法輸出非有限數值: {value}")
    if value == 0.0:
        return "0"
    if value.is_integer() and abs(value) < 1e16:
        return str(int(value))
    return repr(value)
