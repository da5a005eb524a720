"""Kernel backend selection for the matching hot loops.

Two interchangeable implementations exist: numba-jitted loops
(``kernels_numba``) and a vectorized pure-numpy fallback
(``kernels_numpy``). The active one is picked, in order of precedence,
by :func:`set_backend`, the ``FGBGVOS_KERNELS`` environment variable
(``numba`` or ``numpy``), or the default (numba when importable).

Both backends implement the same two functions with identical
signatures and conventions:

    global_min_sqdist(cur, ref, fg)  -> (min_fg, arg_fg, min_bg, arg_bg)
    local_min_sqdist(cur, prev, fg, radii)
                                     -> (min_fg, arg_fg, min_bg, arg_bg)

``arg_*`` hold flat row-major indices into the reference grid, -1 where
the candidate set is empty (the matching ``min_*`` entry is +inf).
Within a candidate set the first minimizer in row-major scan order
wins, so results are deterministic across runs.
"""

from __future__ import annotations

import os
import warnings

from ..errors import InvalidConfigError

_ENV_VAR = "FGBGVOS_KERNELS"
_VALID = ("numba", "numpy")

_forced: str | None = None
_module_cache: dict[str, object] = {}


def _default_backend() -> str:
    try:
        import numba  # noqa: F401
    except ImportError:
        return "numpy"
    return "numba"


def active_backend() -> str:
    """Name of the backend that kernel calls will dispatch to."""
    if _forced is not None:
        return _forced
    env = os.environ.get(_ENV_VAR, "").strip().lower()
    if env:
        if env not in _VALID:
            raise InvalidConfigError(
                f"{_ENV_VAR} must be one of {_VALID}, got {env!r}"
            )
        if env == "numba":
            try:
                import numba  # noqa: F401
            except ImportError:
                warnings.warn(
                    f"{_ENV_VAR}=numba requested but numba is not importable; "
                    "falling back to numpy kernels"
                )
                return "numpy"
        return env
    return _default_backend()


def set_backend(name: str | None) -> None:
    """Force a backend programmatically (None restores env/default)."""
    global _forced
    if name is not None and name not in _VALID:
        raise InvalidConfigError(f"backend must be one of {_VALID}, got {name!r}")
    _forced = name


def available_backends() -> tuple[str, ...]:
    """Backends usable in this environment, numpy always included."""
    try:
        import numba  # noqa: F401
    except ImportError:
        return ("numpy",)
    return ("numba", "numpy")


def kernels():
    """Return the module implementing the active backend."""
    name = active_backend()
    mod = _module_cache.get(name)
    if mod is None:
        if name == "numba":
            from . import kernels_numba as mod
        else:
            from . import kernels_numpy as mod
        _module_cache[name] = mod
    return mod
