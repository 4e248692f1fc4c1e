"""Backend selection for the integration kernels.

The compiled extension ``_core`` is used when importable; otherwise (or when the
environment variable ``APSIDAL_PURE=1`` is set) the pure-Python ``_pycore``
implementation is used. Both expose ``eval_program``, ``integrate`` and
``dense_eval`` with identical semantics.
"""
from __future__ import annotations

import os

from . import _pycore

STATUS_T_END = _pycore.STATUS_T_END
STATUS_EVENTS = _pycore.STATUS_EVENTS
STATUS_DOMAIN = _pycore.STATUS_DOMAIN
STATUS_STEP_FAILURE = _pycore.STATUS_STEP_FAILURE
STATUS_MAX_STEPS = _pycore.STATUS_MAX_STEPS

pure = _pycore
compiled = None
try:  # pragma: no cover - depends on the build
    from . import _core as compiled
except ImportError:
    compiled = None

if os.environ.get("APSIDAL_PURE", "") not in ("", "0") or compiled is None:
    backend = pure
else:
    backend = compiled


def backend_name() -> str:
    return backend.NAME


def integrate(program, y0, t0, t_end, *, rtol=1e-12, atol=1e-12, h0=0.0,
              r_lo=0.0, r_hi=float("inf"), max_events=0, record=False, max_steps=1_000_000):
    """Run the active backend's DOP853 integrator.

    Returns a dict with ``status`` (one of the ``STATUS_*`` codes), final ``t``
    and ``y``, step counts, perihelion ``event_t``/``event_y``, the energy
    extrema ``H0``, ``H_min``, ``H_max`` and, when ``record`` is set, the
    accepted-step trajectory ``traj_t``, ``traj_y``, ``traj_H`` together with the
    step sizes ``traj_h`` and dense-output coefficients ``traj_F``.
    """
    return backend.integrate(program, y0, float(t0), float(t_end), float(rtol), float(atol),
                             float(h0), float(r_lo), float(r_hi), int(max_events), bool(record),
                             int(max_steps))
