"""Coin amount arithmetic.

All ledger values are integers in micro-coin base units so escrow accounting
closes bit-exactly. Rates (deposit, fee) are exact fractions; products are
floored to base units.
"""
from __future__ import annotations

from fractions import Fraction

UNIT = 1_000_000  # base units per coin


def coins(amount: int | float | str) -> int:
    """Parse a coin-denominated amount into base units (exact)."""
    value = Fraction(str(amount)) * UNIT
    if value.denominator != 1:
        raise ValueError(f"amount {amount!r} is finer than one base unit")
    if value < 0:
        raise ValueError(f"amount {amount!r} is negative")
    return int(value)


def rate(value: int | float | str) -> Fraction:
    """Parse a dimensionless rate (e.g. '0.1') exactly."""
    parsed = Fraction(str(value))
    if parsed < 0:
        raise ValueError(f"rate {value!r} is negative")
    return parsed


def rate_floor(r: Fraction, amount: int) -> int:
    """floor(r * amount) in base units."""
    return int(r * amount // 1)


def fmt(units: int) -> str:
    """Base units rendered as a decimal coin string (exact, no trailing zeros)."""
    sign = "-" if units < 0 else ""
    units = abs(units)
    whole, frac = divmod(units, UNIT)
    if frac == 0:
        return f"{sign}{whole}"
    digits = f"{frac:06d}".rstrip("0")
    return f"{sign}{whole}.{digits}"
