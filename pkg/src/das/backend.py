"""Kernel backend selection: compiled extension with numpy/scipy fallback.

The compiled ``das._kernels`` extension is optional; when it failed to
build (or ``DAS_BACKEND=fallback`` is set) the pure numpy/scipy kernels
take over transparently. ``DAS_BACKEND=compiled`` makes a missing
extension a hard error instead of a silent slowdown.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable

from das import _fallback

try:
    from das import _kernels
except ImportError:
    _kernels = None


@dataclass(frozen=True)
class KernelBackend:
    name: str
    lsap: Callable
    iou_matrix: Callable
    match_cost_matrix: Callable


_BACKENDS = {"fallback": KernelBackend("fallback", _fallback.lsap,
                                       _fallback.iou_matrix,
                                       _fallback.match_cost_matrix)}
if _kernels is not None:
    _BACKENDS["compiled"] = KernelBackend("compiled", _kernels.lsap,
                                          _kernels.iou_matrix,
                                          _kernels.match_cost_matrix)


def available_backends() -> list:
    """Backend names usable in this environment, preferred first."""
    return [name for name in ("compiled", "fallback") if name in _BACKENDS]


def get_backend(name: str) -> KernelBackend:
    if name not in _BACKENDS:
        raise ValueError(f"kernel backend {name!r} unavailable "
                         f"(have: {available_backends()})")
    return _BACKENDS[name]


def active_backend() -> KernelBackend:
    """The backend scoring uses by default (env override: ``DAS_BACKEND``)."""
    forced = os.environ.get("DAS_BACKEND", "").strip().lower()
    if forced:
        return get_backend(forced)
    return _BACKENDS["compiled" if "compiled" in _BACKENDS else "fallback"]
