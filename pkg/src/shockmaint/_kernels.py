"""Hot loops: the Jacobi sweep and the event-driven path simulator.

Everything here is written once as plain Python over scalars and arrays and
compiled with numba when available (see ``_jit``). The sweep additionally has a
vectorised numpy twin, used when numba is disabled.
"""
import math

import numpy as np

from ._jit import USE_NUMBA, njit

EV_SHOCK = 0
EV_INTERVENTION = 1
EV_FAILURE = 2
EV_HORIZON = 3
EVENT_NAMES = ("shock", "intervention", "failure", "horizon")

END_FAILURE = 0
END_HORIZON = 1
END_STEP_CAP = 2

_SIMPSON_DEPTH = 50


# ---------------------------------------------------------------------------
# Jacobi sweep


@njit
def _sweep_loop(V, J, G, a, lam, delta, H, k, out):
    N = V.shape[0]
    best = -np.inf
    change = 0.0
    min_inc = np.inf
    for i in range(N - 1, -1, -1):
        x = V[i] - H[i]
        if x > best:
            best = x
        interv = best + H[i] - k
        left = V[i - 1] if i > 0 else 0.0
        cont = (G[i] + a[i] * left + lam * J[i]) / (delta + a[i] + lam)
        v = cont if cont >= interv else interv
        out[i] = v
        d = v - V[i]
        if abs(d) > change:
            change = abs(d)
        if d < min_inc:
            min_inc = d
    return change, min_inc


def _sweep_numpy(V, J, G, a, lam, delta, H, k, out):
    smax = np.maximum.accumulate((V - H)[::-1])[::-1]
    interv = smax + H - k
    left = np.empty_like(V)
    left[0] = 0.0
    left[1:] = V[:-1]
    cont = (G + a * left + lam * J) / (delta + a + lam)
    np.maximum(cont, interv, out=out)
    d = out - V
    return float(np.max(np.abs(d))), float(np.min(d))


sweep = _sweep_loop if USE_NUMBA else _sweep_numpy


@njit
def suffix_argmax(x):
    """For each i, the smallest j >= i maximising ``x[j]``, and that maximum."""
    N = x.shape[0]
    arg = np.empty(N, dtype=np.int64)
    val = np.empty(N)
    best = -np.inf
    bj = N - 1
    for i in range(N - 1, -1, -1):
        if x[i] >= best:
            best = x[i]
            bj = i
        arg[i] = bj
        val[i] = best
    return val, arg


@njit
def intervention_exhaustive(V, H, k):
    """O(N^2) scan of ``max_{j>=i} V_j - H_j + H_i - k`` with low tie-breaking."""
    N = V.shape[0]
    val = np.empty(N)
    arg = np.empty(N, dtype=np.int64)
    for i in range(N):
        best = -np.inf
        bj = i
        for j in range(i, N):
            x = V[j] - H[j] + H[i] - k
            if x > best:
                best = x
                bj = j
        val[i] = best
        arg[i] = bj
    return val, arg


# ---------------------------------------------------------------------------
# Counter-based uniforms: splitmix64 finaliser over (seed, stream, counter)

if USE_NUMBA:
    _GOLDEN = np.uint64(0x9E3779B97F4A7C15)
    _M1 = np.uint64(0xBF58476D1CE4E5B9)
    _M2 = np.uint64(0x94D049BB133111EB)
    _SALT = np.uint64(0x632BE59BD9B4E019)

    @njit(inline="always")
    def _mix64(z):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))

    @njit(inline="always")
    def uniform01(seed, stream, counter):
        key = _mix64(np.uint64(seed) ^ _mix64(np.uint64(stream) * _GOLDEN + _SALT))
        z = _mix64(key + (np.uint64(counter) + np.uint64(1)) * _GOLDEN)
        return (float(z >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)

else:
    _MASK = (1 << 64) - 1

    def _mix64(z):
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def uniform01(seed, stream, counter):
        key = _mix64(int(seed) ^ _mix64((int(stream) * 0x9E3779B97F4A7C15 + 0x632BE59BD9B4E019) & _MASK))
        z = _mix64((key + (int(counter) + 1) * 0x9E3779B97F4A7C15) & _MASK)
        return (float(z >> 11) + 0.5) * (1.0 / 9007199254740992.0)


@njit
def ndtri(p):
    """Inverse standard normal CDF (rational start plus one Halley step)."""
    if p <= 0.0:
        return -np.inf
    if p >= 1.0:
        return np.inf
    plow = 0.02425
    if p < plow:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((-7.784894002430293e-03 * q - 3.223964580411365e-01) * q - 2.400758277161838e+00) * q
               - 2.549732539343734e+00) * q + 4.374664141464968e+00) * q + 2.938163982698783e+00) / (
            (((7.784695709041462e-03 * q + 3.224671290700398e-01) * q + 2.445134137142996e+00) * q
             + 3.754408661907416e+00) * q + 1.0)
    elif p <= 1.0 - plow:
        q = p - 0.5
        r = q * q
        x = (((((-3.969683028665376e+01 * r + 2.209460984245205e+02) * r - 2.759285104469687e+02) * r
               + 1.383577518672690e+02) * r - 3.066479806614716e+01) * r + 2.506628277459239e+00) * q / (
            ((((-5.447609879822406e+01 * r + 1.615858368580409e+02) * r - 1.556989798598866e+02) * r
              + 6.680131188771972e+01) * r - 1.328068155288572e+01) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -(((((-7.784894002430293e-03 * q - 3.223964580411365e-01) * q - 2.400758277161838e+00) * q
                - 2.549732539343734e+00) * q + 4.374664141464968e+00) * q + 2.938163982698783e+00) / (
            (((7.784695709041462e-03 * q + 3.224671290700398e-01) * q + 2.445134137142996e+00) * q
             + 3.754408661907416e+00) * q + 1.0)
    if p < 0.5:
        e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    else:
        e = (1.0 - p) - 0.5 * math.erfc(x / math.sqrt(2.0))
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


@njit(inline="always")
def sample_shock(dcode, dpar, dx, dcw, u):
    if dcode == 0:
        return math.exp(dpar[0] + dpar[1] * ndtri(u))
    if dcode == 1:
        return dpar[0] + (dpar[1] - dpar[0]) * u
    if dcode == 2:
        return dpar[0]
    j = np.searchsorted(dcw, u)
    if j >= dx.shape[0]:
        j = dx.shape[0] - 1
    return dx[j]


@njit(inline="always")
def eval_fn(code, par, tx, ty, r):
    if code == 0:
        return par[0]
    if code == 1:
        return par[0] * (1.0 - math.exp(-par[1] * r))
    if code == 2:
        return np.interp(r, tx, ty)
    if code == 3:
        return par[1] * math.sqrt(r + par[0])
    return par[1] * r ** par[0]


# ---------------------------------------------------------------------------
# Deterministic drift dR/dt = -c(R), c piecewise linear on knots xs


@njit(inline="always")
def _piece(xs, r):
    k = np.searchsorted(xs, r, side="right") - 1
    if k < 0:
        k = 0
    if k > xs.shape[0] - 2:
        k = xs.shape[0] - 2
    return k


@njit(inline="always")
def _descent_time(c_from, sl, dist):
    # time to move down by dist inside one linear piece, starting where c = c_from
    if dist <= 0.0:
        return 0.0
    if sl == 0.0:
        return dist / c_from
    c_to = c_from - sl * dist
    return math.log1p(sl * dist / c_to) / sl


@njit(inline="always")
def flow(xs, cs, r, t):
    """State after drifting for ``t`` from ``r``; returns ``(state, hit)``.

    ``hit`` is the time the state reaches ``xs[0]`` if that happens within
    ``t`` (the state is then ``xs[0]``), otherwise -1.
    """
    k = _piece(xs, r)
    elapsed = 0.0
    while True:
        x0 = xs[k]
        sl = (cs[k + 1] - cs[k]) / (xs[k + 1] - x0)
        cr = cs[k] + sl * (r - x0)
        tp = _descent_time(cr, sl, r - x0)
        if elapsed + tp > t:
            tau = t - elapsed
            if sl == 0.0:
                y = r - cr * tau
            else:
                y = r + cr * math.expm1(-sl * tau) / sl
            return (y if y > x0 else x0), -1.0
        elapsed += tp
        r = x0
        if k == 0:
            return x0, elapsed
        k -= 1


@njit(inline="always")
def hit_time(xs, cs, r, x):
    """Time for the drift to carry ``r`` down to level ``x`` (``xs[0] <= x``)."""
    if x >= r:
        return 0.0
    k = _piece(xs, r)
    total = 0.0
    while True:
        x0 = xs[k]
        sl = (cs[k + 1] - cs[k]) / (xs[k + 1] - x0)
        cr = cs[k] + sl * (r - x0)
        if x >= x0:
            return total + _descent_time(cr, sl, r - x)
        total += _descent_time(cr, sl, r - x0)
        r = x0
        k -= 1


@njit(inline="always")
def _g_at(r, cr, sl, u, delta, t0, gcode, gpar, gx, gy):
    # discounted benefit at local time u inside one linear piece of c
    if sl == 0.0:
        y = r - cr * u
    else:
        y = r + cr * math.expm1(-sl * u) / sl
    return math.exp(-delta * (t0 + u)) * eval_fn(gcode, gpar, gx, gy, y)


def simpson_workspace():
    return np.empty((8, _SIMPSON_DEPTH + 2))


@njit
def _simpson_piece(r, cr, sl, t0, L, delta, gcode, gpar, gx, gy, tol, ws):
    fa = _g_at(r, cr, sl, 0.0, delta, t0, gcode, gpar, gx, gy)
    fm = _g_at(r, cr, sl, 0.5 * L, delta, t0, gcode, gpar, gx, gy)
    fb = _g_at(r, cr, sl, L, delta, t0, gcode, gpar, gx, gy)
    ws[0, 0] = 0.0
    ws[1, 0] = L
    ws[2, 0] = fa
    ws[3, 0] = fm
    ws[4, 0] = fb
    ws[5, 0] = L / 6.0 * (fa + 4.0 * fm + fb)
    ws[6, 0] = tol
    ws[7, 0] = 0.0
    sp = 1
    total = 0.0
    while sp > 0:
        sp -= 1
        a = ws[0, sp]
        b = ws[1, sp]
        fa = ws[2, sp]
        fm = ws[3, sp]
        fb = ws[4, sp]
        whole = ws[5, sp]
        tl = ws[6, sp]
        dep = ws[7, sp]
        c = 0.5 * (a + b)
        h = b - a
        fl = _g_at(r, cr, sl, 0.5 * (a + c), delta, t0, gcode, gpar, gx, gy)
        fr = _g_at(r, cr, sl, 0.5 * (c + b), delta, t0, gcode, gpar, gx, gy)
        left = h / 12.0 * (fa + 4.0 * fl + fm)
        right = h / 12.0 * (fm + 4.0 * fr + fb)
        err = left + right - whole
        if dep >= _SIMPSON_DEPTH or abs(err) <= 15.0 * tl:
            total += left + right + err / 15.0
        else:
            ws[0, sp] = c
            ws[1, sp] = b
            ws[2, sp] = fm
            ws[3, sp] = fr
            ws[4, sp] = fb
            ws[5, sp] = right
            ws[6, sp] = 0.5 * tl
            ws[7, sp] = dep + 1.0
            sp += 1
            ws[0, sp] = a
            ws[1, sp] = c
            ws[2, sp] = fa
            ws[3, sp] = fl
            ws[4, sp] = fm
            ws[5, sp] = left
            ws[6, sp] = 0.5 * tl
            ws[7, sp] = dep + 1.0
            sp += 1
    return total


@njit
def segment_benefit(xs, cs, r, L, delta, gcode, gpar, gx, gy, tol, ws):
    """``int_0^L exp(-delta u) G(flow(r, u)) du`` by adaptive Simpson.

    The interval is split where the flow crosses a knot of ``c``, so each
    Simpson run sees a closed-form smooth integrand; ``tol`` is shared out in
    proportion to length. ``ws`` is scratch space from ``simpson_workspace``.
    """
    if L <= 0.0:
        return 0.0
    k = _piece(xs, r)
    t0 = 0.0
    total = 0.0
    while t0 < L:
        x0 = xs[k]
        sl = (cs[k + 1] - cs[k]) / (xs[k + 1] - x0)
        cr = cs[k] + sl * (r - x0)
        if r <= x0 and k == 0:
            # parked at the bottom knot
            cr = 0.0
            sl = 0.0
            tp = L - t0
        else:
            tp = _descent_time(cr, sl, r - x0)
        last = t0 + tp >= L
        step = L - t0 if last else tp
        if step > 0.0:
            total += _simpson_piece(r, cr, sl, t0, step, delta, gcode, gpar, gx, gy,
                                    tol * step / L, ws)
        if last:
            break
        t0 += step
        r = x0
        if k > 0:
            k -= 1
    return total


# ---------------------------------------------------------------------------
# One controlled path


@njit
def run_path(xs, cs, lam, delta, k,
             gcode, gpar, gx, gy, hcode, hpar, hx, hy, dcode, dpar, dx, dcw,
             active, s_low, s_high, S,
             r0, horizon, seed, stream, tol, max_steps,
             ev_t, ev_type, ev_before, ev_after, ev_ben, ev_cost):
    """Simulate one path of the (s_low, s_high, S) policy from ``r0``.

    Returns ``(benefit, cost, t_end, status, n_events, n_shocks, n_interventions)``;
    events beyond the capacity of the ``ev_*`` buffers are counted but not stored.
    """
    m = xs[0]
    cap = ev_t.shape[0]
    t = 0.0
    r = r0
    ben = 0.0
    cost = 0.0
    ne = 0
    nshock = 0
    nint = 0
    status = END_STEP_CAP
    HS = eval_fn(hcode, hpar, hx, hy, S) if active else 0.0
    ws = np.empty((8, _SIMPSON_DEPTH + 2))

    if active and r >= s_low and r <= s_high:
        cost += HS - eval_fn(hcode, hpar, hx, hy, r) + k
        if ne < cap:
            ev_t[ne] = t
            ev_type[ne] = EV_INTERVENTION
            ev_before[ne] = r
            ev_after[ne] = S
            ev_ben[ne] = ben
            ev_cost[ne] = cost
        ne += 1
        nint += 1
        r = S

    if lam > 0.0:
        next_shock = -math.log(uniform01(seed, stream, 0)) / lam
    else:
        next_shock = np.inf

    for _ in range(max_steps):
        to_policy = active and r > s_high
        target = s_high if to_policy else m
        th = t + hit_time(xs, cs, r, target)
        t_end = th
        if next_shock < t_end:
            t_end = next_shock
        if horizon < t_end:
            t_end = horizon
        seg = t_end - t
        if seg > 0.0:
            # tol bounds the error of the discounted contribution
            disc = math.exp(-delta * t)
            ben += disc * segment_benefit(
                xs, cs, r, seg, delta, gcode, gpar, gx, gy, tol / max(disc, 1e-300), ws)

        if horizon <= th and horizon <= next_shock:
            y, _ = flow(xs, cs, r, seg)
            if ne < cap:
                ev_t[ne] = horizon
                ev_type[ne] = EV_HORIZON
                ev_before[ne] = r
                ev_after[ne] = y
                ev_ben[ne] = ben
                ev_cost[ne] = cost
            ne += 1
            t = horizon
            r = y
            status = END_HORIZON
            break

        if th <= next_shock:
            t = th
            if to_policy:
                cost += math.exp(-delta * t) * (HS - eval_fn(hcode, hpar, hx, hy, s_high) + k)
                if ne < cap:
                    ev_t[ne] = t
                    ev_type[ne] = EV_INTERVENTION
                    ev_before[ne] = s_high
                    ev_after[ne] = S
                    ev_ben[ne] = ben
                    ev_cost[ne] = cost
                ne += 1
                nint += 1
                r = S
                continue
            if ne < cap:
                ev_t[ne] = t
                ev_type[ne] = EV_FAILURE
                ev_before[ne] = m
                ev_after[ne] = m
                ev_ben[ne] = ben
                ev_cost[ne] = cost
            ne += 1
            r = m
            status = END_FAILURE
            break

        t = next_shock
        rb, _ = flow(xs, cs, r, seg)
        size = sample_shock(dcode, dpar, dx, dcw, uniform01(seed, stream, 2 * nshock + 1))
        nshock += 1
        ra = rb - size
        if ra < m:
            if ne < cap:
                ev_t[ne] = t
                ev_type[ne] = EV_FAILURE
                ev_before[ne] = rb
                ev_after[ne] = ra
                ev_ben[ne] = ben
                ev_cost[ne] = cost
            ne += 1
            r = ra
            status = END_FAILURE
            break
        if ne < cap:
            ev_t[ne] = t
            ev_type[ne] = EV_SHOCK
            ev_before[ne] = rb
            ev_after[ne] = ra
            ev_ben[ne] = ben
            ev_cost[ne] = cost
        ne += 1
        r = ra
        if active and r >= s_low and r <= s_high:
            cost += math.exp(-delta * t) * (HS - eval_fn(hcode, hpar, hx, hy, r) + k)
            if ne < cap:
                ev_t[ne] = t
                ev_type[ne] = EV_INTERVENTION
                ev_before[ne] = r
                ev_after[ne] = S
                ev_ben[ne] = ben
                ev_cost[ne] = cost
            ne += 1
            nint += 1
            r = S
        next_shock = t - math.log(uniform01(seed, stream, 2 * nshock)) / lam

    return ben, cost, t, status, ne, nshock, nint


@njit
def mc_payoffs(xs, cs, lam, delta, k,
               gcode, gpar, gx, gy, hcode, hpar, hx, hy, dcode, dpar, dx, dcw,
               active, s_low, s_high, S, r0, horizon, seed, first, tol, max_steps, out, status):
    # path i of the batch uses stream first + i
    e_f = np.empty(0)
    e_i = np.empty(0, dtype=np.int8)
    for i in range(out.shape[0]):
        ben, cost, _, st, _, _, _ = run_path(
            xs, cs, lam, delta, k, gcode, gpar, gx, gy, hcode, hpar, hx, hy,
            dcode, dpar, dx, dcw, active, s_low, s_high, S, r0, horizon, seed, first + i, tol,
            max_steps, e_f, e_i, e_f, e_f, e_f, e_f)
        out[i] = ben - cost
        status[i] = st


@njit
def coupled_sup(xs, cs, lam, dcode, dpar, dx, dcw, r1, r2, T, seed, stream):
    """Largest ``|R1 - R2|`` over event times of two common-shock uncontrolled paths.

    Tracking stops at ``T`` or at the first failure of either path.
    """
    m = xs[0]
    t = 0.0
    a = r1
    b = r2
    sup = abs(a - b)
    n = 0
    if lam > 0.0:
        nxt = -math.log(uniform01(seed, stream, 0)) / lam
    else:
        nxt = np.inf
    while True:
        t_end = nxt if nxt < T else T
        seg = t_end - t
        fa, ha = flow(xs, cs, a, seg)
        fb, hb = flow(xs, cs, b, seg)
        if ha >= 0.0 or hb >= 0.0:
            if ha < 0.0:
                tf = hb
            elif hb < 0.0:
                tf = ha
            else:
                tf = ha if ha < hb else hb
            ya, _ = flow(xs, cs, a, tf)
            yb, _ = flow(xs, cs, b, tf)
            d = abs(ya - yb)
            if d > sup:
                sup = d
            break
        a = fa
        b = fb
        d = abs(a - b)
        if d > sup:
            sup = d
        t = t_end
        if T <= nxt:
            break
        size = sample_shock(dcode, dpar, dx, dcw, uniform01(seed, stream, 2 * n + 1))
        n += 1
        a -= size
        b -= size
        if a < m or b < m:
            break
        nxt = t - math.log(uniform01(seed, stream, 2 * n)) / lam
    return sup


@njit
def coupled_batch(xs, cs, lam, dcode, dpar, dx, dcw, r1, r2, T, seeds, out):
    for i in range(out.shape[0]):
        out[i] = coupled_sup(xs, cs, lam, dcode, dpar, dx, dcw, r1[i], r2[i], T, seeds[i], 0)
