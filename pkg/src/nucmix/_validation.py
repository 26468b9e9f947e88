"""Small parameter checks shared by the estimators, the pipeline and the CLI."""

from __future__ import annotations

import numbers

from .errors import ConfigInvalid

MAX_K = 8


def check_int(value, name: str, *, min_val: int | None = None, max_val: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigInvalid(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if min_val is not None and value < min_val:
        raise ConfigInvalid(f"{name}={value} must be >= {min_val}")
    if max_val is not None and value > max_val:
        raise ConfigInvalid(f"{name}={value} must be <= {max_val}")
    return value


def check_open_unit(value, name: str) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigInvalid(f"{name} must be a number, got {value!r}") from None
    if not 0.0 < value < 1.0:
        raise ConfigInvalid(f"{name}={value} must lie in (0, 1)")
    return value


def check_sk(s, k) -> tuple[int, int]:
    """Step and window size: 1 <= s <= k <= 8."""
    k = check_int(k, "k", min_val=1, max_val=MAX_K)
    s = check_int(s, "s", min_val=1)
    if s > k:
        raise ConfigInvalid(f"step s={s} exceeds window k={k}; bases would be dropped")
    return s, k


def check_scale_factor(scale_factor) -> int:
    f = check_int(scale_factor, "scale_factor", min_val=1, max_val=32)
    if 256 % (8 * f):
        raise ConfigInvalid(f"scale_factor={f} must divide 32 (attention heads need whole dims)")
    return f
