"""Pure-Python integration core.

Reference implementation of the compiled ``_core`` extension with the same
signatures and the same arithmetic order, used when the extension is not built
(or when ``APSIDAL_PURE=1``). Roughly two orders of magnitude slower.
"""
from __future__ import annotations

import math

import numpy as np

from . import _tableau as tab
from .expr import (
    OP_ADD, OP_CONST, OP_COS, OP_DIV, OP_EXP, OP_LOG, OP_MUL, OP_NEG, OP_POWH,
    OP_POWI, OP_SIN, OP_SQRT, OP_SUB, OP_VAR,
)

NAME = "python"

STATUS_T_END = 0
STATUS_EVENTS = 1
STATUS_DOMAIN = 2
STATUS_STEP_FAILURE = 3
STATUS_MAX_STEPS = 4

SAFETY = 0.9
MIN_FACTOR = 0.2
BOUNDARY_RTOL = 1e-9
MAX_FACTOR = 10.0
ERROR_EXPONENT = -1.0 / 8.0

_A = [list(row) for row in tab.A]
_C = list(tab.C)
_B = list(tab.B)
_E3 = list(tab.E3)
_E5 = list(tab.E5)
_D = [list(row) for row in tab.D]


def _make_eval(ops, a, b, c, outs):
    ops = [int(v) for v in ops]
    a = [int(v) for v in a]
    b = [int(v) for v in b]
    c = [float(v) for v in c]
    outs = [int(v) for v in outs]
    n = len(ops)
    slots = [0.0] * n
    sqrt, sin, cos, exp, log, inf, nan = math.sqrt, math.sin, math.cos, math.exp, math.log, math.inf, math.nan

    def run(y):
        s = slots
        for k in range(n):
            op = ops[k]
            if op == OP_CONST:
                v = c[k]
            elif op == OP_VAR:
                v = y[a[k]]
            elif op == OP_ADD:
                v = s[a[k]] + s[b[k]]
            elif op == OP_SUB:
                v = s[a[k]] - s[b[k]]
            elif op == OP_MUL:
                v = s[a[k]] * s[b[k]]
            elif op == OP_DIV:
                d = s[b[k]]
                v = s[a[k]] / d if d != 0.0 else nan
            elif op == OP_NEG:
                v = -s[a[k]]
            elif op == OP_POWI:
                x = s[a[k]]
                m = int(c[k])
                if x == 0.0 and m < 0:
                    v = nan
                else:
                    try:
                        v = x**m
                    except OverflowError:
                        v = inf
            elif op == OP_POWH:
                x = s[a[k]]
                v = sqrt(x) ** int(c[k]) if x >= 0.0 else nan
            elif op == OP_SIN:
                v = sin(s[a[k]])
            elif op == OP_COS:
                v = cos(s[a[k]])
            elif op == OP_EXP:
                x = s[a[k]]
                v = exp(x) if x < 709.0 else inf
            elif op == OP_LOG:
                x = s[a[k]]
                v = log(x) if x > 0.0 else nan
            else:  # OP_SQRT
                x = s[a[k]]
                v = sqrt(x) if x >= 0.0 else nan
            s[k] = v
        return [s[i] for i in outs]

    return run


def eval_program(program, y):
    run = _make_eval(program.ops, program.a, program.b, program.c, program.outputs)
    return np.array(run([float(v) for v in y]))


def _rhs(g):
    # g = [H, H_r, H_theta, H_pr, H_ptheta, a11, det]
    return [g[3], g[4], -g[1], -g[2]]


def _ok(g, r, r_lo, r_hi):
    if not (r_lo < r < r_hi):
        return False
    if not (g[5] > 0.0 and g[6] > 0.0):
        return False
    for v in g[:5]:
        if not math.isfinite(v):
            return False
    return True


def _dense_eval(F, y_old, x):
    y = [0.0] * 4
    for i in range(len(F) - 1, -1, -1):
        f = F[i]
        odd = (len(F) - 1 - i) % 2
        for j in range(4):
            y[j] += f[j]
            y[j] *= (1.0 - x) if odd else x
    return [y_old[j] + y[j] for j in range(4)]


def integrate(program, y0, t0, t_end, rtol, atol, h0, r_lo, r_hi,
              max_events=0, record=False, max_steps=1_000_000):
    """Integrate Hamilton's equations with DOP853.

    Stops at ``t_end`` or after ``max_events`` perihelion crossings (``pr``
    changing sign from negative to non-negative) when ``max_events > 0``.
    Returns a dict; see :func:`apsidal.core.integrate` for the fields.
    """
    run = _make_eval(program.ops, program.a, program.b, program.c, program.outputs)
    y = [float(v) for v in y0]
    t = float(t0)
    g = run(y)
    if not _ok(g, y[0], r_lo, r_hi):
        return _result(STATUS_DOMAIN, t, y, 0, 0, 0.0, [], [], g[0], g[0], g[0], None)
    f = _rhs(g)
    H0 = g[0]
    H_min = H_max = H0

    if h0 <= 0.0:
        h = _initial_step(run, y, f, rtol, atol, r_lo, r_hi)
    else:
        h = h0
    ev_t, ev_y = [], []
    traj = {"t": [t], "y": [list(y)], "H": [H0], "h": [], "F": []} if record else None
    n_steps = n_rej = 0
    K = [[0.0] * 4 for _ in range(16)]
    rejected = False
    status = STATUS_T_END

    while True:
        if t >= t_end:
            status = STATUS_T_END
            break
        if n_steps >= max_steps:
            status = STATUS_MAX_STEPS
            break
        h_min = 10.0 * math.ulp(max(abs(t), 1.0))
        if h > t_end - t:
            h = t_end - t
        if h < h_min:
            # a collapse against the boundary means the orbit runs into it (e.g. the horizon)
            if y[0] - r_lo <= BOUNDARY_RTOL * max(1.0, abs(r_lo)) or r_hi - y[0] <= BOUNDARY_RTOL * max(1.0, abs(y[0])):
                status = STATUS_DOMAIN
            else:
                status = STATUS_STEP_FAILURE
            break
        K[0] = f
        bad = False
        for s in range(1, 12):
            row = _A[s]
            yy = [y[j] + h * sum(row[m] * K[m][j] for m in range(s)) for j in range(4)]
            gs = run(yy)
            if not _ok(gs, yy[0], r_lo, r_hi):
                bad = True
                break
            K[s] = _rhs(gs)
        if not bad:
            y_new = [y[j] + h * sum(_B[m] * K[m][j] for m in range(12)) for j in range(4)]
            g_new = run(y_new)
            if not _ok(g_new, y_new[0], r_lo, r_hi):
                bad = True
        if bad:
            n_rej += 1
            rejected = True
            h *= MIN_FACTOR
            if h < h_min:
                status = STATUS_DOMAIN
                break
            continue
        f_new = _rhs(g_new)
        K[12] = f_new
        e5 = e3 = 0.0
        for j in range(4):
            sc = atol + max(abs(y[j]), abs(y_new[j])) * rtol
            v5 = sum(_E5[m] * K[m][j] for m in range(13)) / sc
            v3 = sum(_E3[m] * K[m][j] for m in range(13)) / sc
            e5 += v5 * v5
            e3 += v3 * v3
        if e5 == 0.0 and e3 == 0.0:
            err = 0.0
        else:
            err = abs(h) * e5 / math.sqrt((e5 + 0.01 * e3) * 4.0)
        if not math.isfinite(err):
            n_rej += 1
            rejected = True
            h *= MIN_FACTOR
            continue
        if err >= 1.0:
            n_rej += 1
            rejected = True
            h *= max(MIN_FACTOR, SAFETY * err**ERROR_EXPONENT)
            continue

        # accepted
        crossed = y[2] < 0.0 <= y_new[2]
        F = None
        if crossed or record:
            F = _dense_coeffs(run, K, y, y_new, f, f_new, t, h)
        n_steps += 1
        H_new = g_new[0]
        H_min = min(H_min, H_new)
        H_max = max(H_max, H_new)
        stop = False
        if crossed:
            x = _locate(F, y, t, h)
            ye = _dense_eval(F, y, x)
            ev_t.append(t + x * h)
            ev_y.append(ye)
            if max_events > 0 and len(ev_t) >= max_events:
                stop = True
        if record:
            traj["h"].append(h)
            traj["F"].append([list(row) for row in F])
        if stop:
            if record:
                # trajectory ends at the event; last dense segment still covers it
                traj["t"].append(ev_t[-1])
                traj["y"].append(list(ev_y[-1]))
                traj["H"].append(run(ev_y[-1])[0])
            status = STATUS_EVENTS
            t, y = ev_t[-1], list(ev_y[-1])
            break
        t_prev_h = h
        t = t + h
        y = y_new
        f = f_new
        if record:
            traj["t"].append(t)
            traj["y"].append(list(y))
            traj["H"].append(H_new)
        if err == 0.0:
            factor = MAX_FACTOR
        else:
            factor = min(MAX_FACTOR, SAFETY * err**ERROR_EXPONENT)
        if rejected:
            factor = min(1.0, factor)
        rejected = False
        h = t_prev_h * factor

    return _result(status, t, y, n_steps, n_rej, h, ev_t, ev_y, H0, H_min, H_max, traj)


def _result(status, t, y, n_steps, n_rej, h, ev_t, ev_y, H0, H_min, H_max, traj):
    out = {
        "status": status,
        "t": t,
        "y": np.array(y, dtype=float),
        "n_steps": n_steps,
        "n_rejected": n_rej,
        "h": h,
        "event_t": np.array(ev_t, dtype=float),
        "event_y": np.array(ev_y, dtype=float).reshape(-1, 4),
        "H0": H0,
        "H_min": H_min,
        "H_max": H_max,
    }
    if traj is not None:
        out["traj_t"] = np.array(traj["t"], dtype=float)
        out["traj_y"] = np.array(traj["y"], dtype=float).reshape(-1, 4)
        out["traj_H"] = np.array(traj["H"], dtype=float)
        out["traj_h"] = np.array(traj["h"], dtype=float)
        out["traj_F"] = np.array(traj["F"], dtype=float).reshape(-1, tab.INTERPOLATOR_POWER, 4)
    return out


def _initial_step(run, y, f, rtol, atol, r_lo, r_hi):
    sc = [atol + abs(v) * rtol for v in y]
    d0 = math.sqrt(sum((y[j] / sc[j]) ** 2 for j in range(4)) / 4.0)
    d1 = math.sqrt(sum((f[j] / sc[j]) ** 2 for j in range(4)) / 4.0)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    y1 = [y[j] + h0 * f[j] for j in range(4)]
    g1 = run(y1)
    if not _ok(g1, y1[0], r_lo, r_hi):
        return h0
    f1 = _rhs(g1)
    d2 = math.sqrt(sum(((f1[j] - f[j]) / sc[j]) ** 2 for j in range(4)) / 4.0) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 9.0)
    return min(100.0 * h0, h1)


def _dense_coeffs(run, K, y, y_new, f, f_new, t, h):
    for s in range(13, 16):
        row = _A[s]
        yy = [y[j] + h * sum(row[m] * K[m][j] for m in range(s)) for j in range(4)]
        K[s] = _rhs(run(yy))
    F = [[0.0] * 4 for _ in range(tab.INTERPOLATOR_POWER)]
    for j in range(4):
        dy = y_new[j] - y[j]
        F[0][j] = dy
        F[1][j] = h * f[j] - dy
        F[2][j] = 2.0 * dy - h * (f_new[j] + f[j])
        for i in range(4):
            F[3 + i][j] = h * sum(_D[i][m] * K[m][j] for m in range(16))
    return F


def _locate(F, y_old, t, h):
    """Root of the dense ``pr`` component on ``[0, 1]`` (Illinois false position)."""
    def g(x):
        return _dense_eval(F, y_old, x)[2]

    lo, hi = 0.0, 1.0
    glo, ghi = y_old[2], g(1.0)
    if ghi < 0.0:
        ghi = 0.0
    side = 0
    tol = 1e-13 * max(1.0, abs(t)) / h
    for _ in range(200):
        if ghi == glo:
            break
        x = (lo * ghi - hi * glo) / (ghi - glo)
        if not lo < x < hi:
            x = 0.5 * (lo + hi)
        gx = g(x)
        if gx < 0.0:
            lo, glo = x, gx
            if side == -1:
                ghi *= 0.5
            side = -1
        else:
            hi, ghi = x, gx
            if side == 1:
                glo *= 0.5
            side = 1
        if hi - lo <= tol or gx == 0.0:
            break
    return hi if ghi == 0.0 else (lo * ghi - hi * glo) / (ghi - glo) if ghi != glo else 0.5 * (lo + hi)


def dense_eval(F, y_old, x):
    return np.array(_dense_eval(F.tolist() if hasattr(F, "tolist") else F, list(y_old), float(x)))
