# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled integration core.

Same API and arithmetic order as :mod:`apsidal._pycore`: a register-program
evaluator for the compiled Hamiltonian and a DOP853 integrator with perihelion
event location on the dense output.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, sin, cos, exp, log, fabs, pow, isfinite, NAN, INFINITY, nextafter
from libc.stdlib cimport malloc, free

from . import _tableau as tab

cnp.import_array()

NAME = "cython"

DEF NS = 16
DEF NI = 7

cdef double A_[NS][NS]
cdef double B_[12]
cdef double E3_[13]
cdef double E5_[13]
cdef double D_[4][NS]

cdef int _i, _j
for _i in range(NS):
    for _j in range(NS):
        A_[_i][_j] = tab.A[_i][_j]
for _i in range(12):
    B_[_i] = tab.B[_i]
for _i in range(13):
    E3_[_i] = tab.E3[_i]
    E5_[_i] = tab.E5[_i]
for _i in range(4):
    for _j in range(NS):
        D_[_i][_j] = tab.D[_i][_j]

cdef enum:
    OP_CONST = 0
    OP_VAR = 1
    OP_ADD = 2
    OP_SUB = 3
    OP_MUL = 4
    OP_DIV = 5
    OP_NEG = 6
    OP_POWI = 7
    OP_POWH = 8
    OP_SIN = 9
    OP_COS = 10
    OP_EXP = 11
    OP_LOG = 12
    OP_SQRT = 13

DEF STATUS_T_END = 0
DEF STATUS_EVENTS = 1
DEF STATUS_DOMAIN = 2
DEF STATUS_STEP_FAILURE = 3
DEF STATUS_MAX_STEPS = 4

DEF SAFETY = 0.9
DEF MIN_FACTOR = 0.2
DEF BOUNDARY_RTOL = 1e-9
DEF MAX_FACTOR = 10.0
DEF ERROR_EXPONENT = -0.125


cdef struct Prog:
    int n
    int nout
    int* ops
    int* a
    int* b
    double* c
    int* outs
    double* slots


cdef double _ipow(double x, int m) noexcept nogil:
    # repeated squaring gives results identical to Python's float ** int only
    # for small exponents; use libm pow for consistency with the reference
    return pow(x, <double>m)


cdef void run_prog(Prog* p, double* y, double* g) noexcept nogil:
    cdef int k, op
    cdef double v, x, d
    cdef double* s = p.slots
    for k in range(p.n):
        op = p.ops[k]
        if op == OP_CONST:
            v = p.c[k]
        elif op == OP_VAR:
            v = y[p.a[k]]
        elif op == OP_ADD:
            v = s[p.a[k]] + s[p.b[k]]
        elif op == OP_SUB:
            v = s[p.a[k]] - s[p.b[k]]
        elif op == OP_MUL:
            v = s[p.a[k]] * s[p.b[k]]
        elif op == OP_DIV:
            d = s[p.b[k]]
            v = s[p.a[k]] / d if d != 0.0 else NAN
        elif op == OP_NEG:
            v = -s[p.a[k]]
        elif op == OP_POWI:
            x = s[p.a[k]]
            if x == 0.0 and p.c[k] < 0:
                v = NAN
            else:
                v = _ipow(x, <int>p.c[k])
        elif op == OP_POWH:
            x = s[p.a[k]]
            v = pow(sqrt(x), p.c[k]) if x >= 0.0 else NAN
        elif op == OP_SIN:
            v = sin(s[p.a[k]])
        elif op == OP_COS:
            v = cos(s[p.a[k]])
        elif op == OP_EXP:
            x = s[p.a[k]]
            v = exp(x) if x < 709.0 else INFINITY
        elif op == OP_LOG:
            x = s[p.a[k]]
            v = log(x) if x > 0.0 else NAN
        else:
            x = s[p.a[k]]
            v = sqrt(x) if x >= 0.0 else NAN
        s[k] = v
    for k in range(p.nout):
        g[k] = s[p.outs[k]]


cdef class _ProgHolder:
    cdef Prog p
    cdef object keep

    def __cinit__(self, program):
        cdef cnp.ndarray[int, ndim=1] ops = np.ascontiguousarray(program.ops, dtype=np.intc)
        cdef cnp.ndarray[int, ndim=1] a = np.ascontiguousarray(program.a, dtype=np.intc)
        cdef cnp.ndarray[int, ndim=1] b = np.ascontiguousarray(program.b, dtype=np.intc)
        cdef cnp.ndarray[double, ndim=1] c = np.ascontiguousarray(program.c, dtype=np.float64)
        cdef cnp.ndarray[int, ndim=1] outs = np.ascontiguousarray(program.outputs, dtype=np.intc)
        cdef cnp.ndarray[double, ndim=1] slots = np.zeros(max(len(ops), 1))
        self.keep = (ops, a, b, c, outs, slots)
        self.p.n = ops.shape[0]
        self.p.nout = outs.shape[0]
        self.p.ops = &ops[0] if ops.shape[0] else NULL
        self.p.a = &a[0] if a.shape[0] else NULL
        self.p.b = &b[0] if b.shape[0] else NULL
        self.p.c = &c[0] if c.shape[0] else NULL
        self.p.outs = &outs[0]
        self.p.slots = &slots[0]


def eval_program(program, y):
    cdef _ProgHolder h = _ProgHolder(program)
    cdef double yy[4]
    cdef int j
    for j in range(4):
        yy[j] = float(y[j])
    cdef cnp.ndarray[double, ndim=1] out = np.empty(h.p.nout)
    run_prog(&h.p, yy, &out[0])
    return out


cdef inline void rhs(double* g, double* f) noexcept nogil:
    f[0] = g[3]
    f[1] = g[4]
    f[2] = -g[1]
    f[3] = -g[2]


cdef inline bint ok(double* g, double r, double r_lo, double r_hi) noexcept nogil:
    cdef int j
    if not (r_lo < r < r_hi):
        return False
    if not (g[5] > 0.0 and g[6] > 0.0):
        return False
    for j in range(5):
        if not isfinite(g[j]):
            return False
    return True


cdef void dense_eval_c(double* F, double* y_old, double x, double* out) noexcept nogil:
    # F is NI x 4 row-major
    cdef double y[4]
    cdef int i, j, odd
    for j in range(4):
        y[j] = 0.0
    for i in range(NI - 1, -1, -1):
        odd = (NI - 1 - i) % 2
        for j in range(4):
            y[j] += F[4 * i + j]
            if odd:
                y[j] *= (1.0 - x)
            else:
                y[j] *= x
    for j in range(4):
        out[j] = y_old[j] + y[j]


cdef double ulp(double x) noexcept nogil:
    return nextafter(x, INFINITY) - x


cdef void stage_state(double K[NS][4], int s, double* y, double h, double* yy) noexcept nogil:
    cdef int j, m
    cdef double acc
    for j in range(4):
        # same summation order as the reference: sum over m, then scale by h
        acc = 0.0
        for m in range(s):
            acc += A_[s][m] * K[m][j]
        yy[j] = y[j] + h * acc


cdef void dense_coeffs(Prog* p, double K[NS][4], double* y, double* y_new, double* f,
                       double* f_new, double h, double* F, double* g) noexcept nogil:
    cdef int s, i, j, m
    cdef double yy[4]
    cdef double dy, acc
    for s in range(13, 16):
        stage_state(K, s, y, h, yy)
        run_prog(p, yy, g)
        rhs(g, K[s])
    for j in range(4):
        dy = y_new[j] - y[j]
        F[j] = dy
        F[4 + j] = h * f[j] - dy
        F[8 + j] = 2.0 * dy - h * (f_new[j] + f[j])
        for i in range(4):
            acc = 0.0
            for m in range(NS):
                acc += D_[i][m] * K[m][j]
            F[4 * (3 + i) + j] = h * acc


cdef double locate(double* F, double* y_old, double t, double h) noexcept nogil:
    cdef double lo = 0.0, hi = 1.0, glo, ghi, x, gx
    cdef double tmp[4]
    cdef int side = 0, it
    cdef double tol = 1e-13 * (fabs(t) if fabs(t) > 1.0 else 1.0) / h
    glo = y_old[2]
    dense_eval_c(F, y_old, 1.0, tmp)
    ghi = tmp[2]
    if ghi < 0.0:
        ghi = 0.0
    for it in range(200):
        if ghi == glo:
            break
        x = (lo * ghi - hi * glo) / (ghi - glo)
        if not (lo < x < hi):
            x = 0.5 * (lo + hi)
        dense_eval_c(F, y_old, x, tmp)
        gx = tmp[2]
        if gx < 0.0:
            lo = x
            glo = gx
            if side == -1:
                ghi *= 0.5
            side = -1
        else:
            hi = x
            ghi = gx
            if side == 1:
                glo *= 0.5
            side = 1
        if hi - lo <= tol or gx == 0.0:
            break
    if ghi == 0.0:
        return hi
    if ghi != glo:
        return (lo * ghi - hi * glo) / (ghi - glo)
    return 0.5 * (lo + hi)


cdef double initial_step(Prog* p, double* y, double* f, double rtol, double atol,
                         double r_lo, double r_hi, double* g) noexcept nogil:
    cdef double sc[4]
    cdef double y1[4]
    cdef double f1[4]
    cdef double d0 = 0.0, d1 = 0.0, d2 = 0.0, h0, h1, v
    cdef int j
    for j in range(4):
        sc[j] = atol + fabs(y[j]) * rtol
        d0 += (y[j] / sc[j]) * (y[j] / sc[j])
        d1 += (f[j] / sc[j]) * (f[j] / sc[j])
    d0 = sqrt(d0 / 4.0)
    d1 = sqrt(d1 / 4.0)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    for j in range(4):
        y1[j] = y[j] + h0 * f[j]
    run_prog(p, y1, g)
    if not ok(g, y1[0], r_lo, r_hi):
        return h0
    rhs(g, f1)
    for j in range(4):
        v = (f1[j] - f[j]) / sc[j]
        d2 += v * v
    d2 = sqrt(d2 / 4.0) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = h0 * 1e-3 if h0 * 1e-3 > 1e-6 else 1e-6
    else:
        h1 = pow(0.01 / (d1 if d1 > d2 else d2), 1.0 / 9.0)
    return h1 if h1 < 100.0 * h0 else 100.0 * h0


def integrate(program, y0, double t0, double t_end, double rtol, double atol, double h0,
              double r_lo, double r_hi, int max_events=0, bint record=False,
              long max_steps=1000000):
    """Integrate Hamilton's equations with DOP853; see :func:`apsidal.core.integrate`."""
    cdef _ProgHolder holder = _ProgHolder(program)
    cdef Prog* p = &holder.p
    cdef double g[32]
    cdef double g_new[32]
    cdef double y[4]
    cdef double y_new[4]
    cdef double yy[4]
    cdef double f[4]
    cdef double f_new[4]
    cdef double ye[4]
    cdef double K[NS][4]
    cdef double F[NI * 4]
    cdef double t = t0, h, h_min, err, e5, e3, sc, v5, v3, factor, x, H0, H_min, H_max, H_new, te
    cdef double acc5, acc3, acc
    cdef int j, s, m, status = STATUS_T_END
    cdef long n_steps = 0, n_rej = 0
    cdef bint bad, rejected = False, crossed, stop
    if p.nout > 32:
        raise ValueError("program has too many outputs")
    for j in range(4):
        y[j] = float(y0[j])
    ev_t = []
    ev_y = []
    run_prog(p, y, g)
    if not ok(g, y[0], r_lo, r_hi):
        return _result(STATUS_DOMAIN, t, y, 0, 0, 0.0, ev_t, ev_y, g[0], g[0], g[0], None)
    rhs(g, f)
    H0 = g[0]
    H_min = H0
    H_max = H0
    if h0 <= 0.0:
        h = initial_step(p, y, f, rtol, atol, r_lo, r_hi, g_new)
    else:
        h = h0
    traj = None
    if record:
        traj = {"t": [t], "y": [[y[0], y[1], y[2], y[3]]], "H": [H0], "h": [], "F": []}

    while True:
        if t >= t_end:
            status = STATUS_T_END
            break
        if n_steps >= max_steps:
            status = STATUS_MAX_STEPS
            break
        h_min = 10.0 * ulp(fabs(t) if fabs(t) > 1.0 else 1.0)
        if h > t_end - t:
            h = t_end - t
        if h < h_min:
            # a collapse against the boundary means the orbit runs into it (e.g. the horizon)
            if y[0] - r_lo <= BOUNDARY_RTOL * max(1.0, abs(r_lo)) or r_hi - y[0] <= BOUNDARY_RTOL * max(1.0, abs(y[0])):
                status = STATUS_DOMAIN
            else:
                status = STATUS_STEP_FAILURE
            break
        for j in range(4):
            K[0][j] = f[j]
        bad = False
        for s in range(1, 12):
            stage_state(K, s, y, h, yy)
            run_prog(p, yy, g_new)
            if not ok(g_new, yy[0], r_lo, r_hi):
                bad = True
                break
            rhs(g_new, K[s])
        if not bad:
            for j in range(4):
                acc = 0.0
                for m in range(12):
                    acc += B_[m] * K[m][j]
                y_new[j] = y[j] + h * acc
            run_prog(p, y_new, g_new)
            if not ok(g_new, y_new[0], r_lo, r_hi):
                bad = True
        if bad:
            n_rej += 1
            rejected = True
            h *= MIN_FACTOR
            if h < h_min:
                status = STATUS_DOMAIN
                break
            continue
        rhs(g_new, f_new)
        for j in range(4):
            K[12][j] = f_new[j]
        e5 = 0.0
        e3 = 0.0
        for j in range(4):
            sc = atol + (fabs(y[j]) if fabs(y[j]) > fabs(y_new[j]) else fabs(y_new[j])) * rtol
            acc5 = 0.0
            acc3 = 0.0
            for m in range(13):
                acc5 += E5_[m] * K[m][j]
                acc3 += E3_[m] * K[m][j]
            v5 = acc5 / sc
            v3 = acc3 / sc
            e5 += v5 * v5
            e3 += v3 * v3
        if e5 == 0.0 and e3 == 0.0:
            err = 0.0
        else:
            err = fabs(h) * e5 / sqrt((e5 + 0.01 * e3) * 4.0)
        if not isfinite(err):
            n_rej += 1
            rejected = True
            h *= MIN_FACTOR
            continue
        if err >= 1.0:
            n_rej += 1
            rejected = True
            factor = SAFETY * pow(err, ERROR_EXPONENT)
            h *= factor if factor > MIN_FACTOR else MIN_FACTOR
            continue

        crossed = y[2] < 0.0 <= y_new[2]
        if crossed or record:
            dense_coeffs(p, K, y, y_new, f, f_new, h, F, g)
        n_steps += 1
        H_new = g_new[0]
        if H_new < H_min:
            H_min = H_new
        if H_new > H_max:
            H_max = H_new
        stop = False
        if crossed:
            x = locate(F, y, t, h)
            dense_eval_c(F, y, x, ye)
            te = t + x * h
            ev_t.append(te)
            ev_y.append([ye[0], ye[1], ye[2], ye[3]])
            if max_events > 0 and len(ev_t) >= max_events:
                stop = True
        if record:
            traj["h"].append(h)
            traj["F"].append([[F[4 * m + j] for j in range(4)] for m in range(NI)])
        if stop:
            if record:
                run_prog(p, ye, g)
                traj["t"].append(te)
                traj["y"].append([ye[0], ye[1], ye[2], ye[3]])
                traj["H"].append(g[0])
            status = STATUS_EVENTS
            t = te
            for j in range(4):
                y[j] = ye[j]
            break
        t = t + h
        for j in range(4):
            y[j] = y_new[j]
            f[j] = f_new[j]
        if record:
            traj["t"].append(t)
            traj["y"].append([y[0], y[1], y[2], y[3]])
            traj["H"].append(H_new)
        if err == 0.0:
            factor = MAX_FACTOR
        else:
            factor = SAFETY * pow(err, ERROR_EXPONENT)
            if factor > MAX_FACTOR:
                factor = MAX_FACTOR
        if rejected and factor > 1.0:
            factor = 1.0
        rejected = False
        h = h * factor

    return _result(status, t, y, n_steps, n_rej, h, ev_t, ev_y, H0, H_min, H_max, traj)


cdef object _result(int status, double t, double* y, long n_steps, long n_rej, double h,
                    list ev_t, list ev_y, double H0, double H_min, double H_max, object traj):
    out = {
        "status": status,
        "t": t,
        "y": np.array([y[0], y[1], y[2], y[3]]),
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
        out["traj_F"] = np.array(traj["F"], dtype=float).reshape(-1, NI, 4)
    return out


def dense_eval(F, y_old, double x):
    cdef cnp.ndarray[double, ndim=2] Fa = np.ascontiguousarray(F, dtype=np.float64).reshape(NI, 4)
    cdef double yo[4]
    cdef double out[4]
    cdef int j
    for j in range(4):
        yo[j] = float(y_old[j])
    dense_eval_c(&Fa[0, 0], yo, x, out)
    return np.array([out[0], out[1], out[2], out[3]])
