"""Integer-coded simulation core for long horizons, JIT-compiled via numba.

The same function runs un-jitted (numpy Generator semantics are identical),
so traces are bit-reproducible whether or not compilation is available.
Encodings: acceptors 0..m-1 with m meaning "single"/"unmatched"; moods
0 = content, 1 = discontent, 2 = watchful; one joint-state integer per step
in mixed radix with per-agent digit (mood*(m+1) + baseline)*(m+1) + utility
level index.
"""
from __future__ import annotations

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency
    njit = None
    _HAVE_NUMBA = False


def _core(
    steps,
    window_start,
    n,
    m,
    eps,
    exclude_baseline,
    revert_keep,
    f_int,
    f_slope,
    g_int,
    g_slope,
    p_vals,
    a_vals,
    util_levels,
    posm_code,
    rng,
    match_codes_out,
    state_codes_out,
):
    c0 = 1.0 - eps - eps * eps
    eps2 = eps * eps
    e15 = eps**1.5
    mood = np.full(n, 1, dtype=np.int64)  # everyone starts discontent
    base = np.full(n, m, dtype=np.int64)
    ubar = np.zeros(n, dtype=np.float64)
    actions = np.zeros(n, dtype=np.int64)
    exper = np.zeros(n, dtype=np.bool_)
    holder = np.zeros(m, dtype=np.int64)
    partner = np.zeros(n, dtype=np.int64)
    first_posm = np.int64(-1)
    state_base = 3 * (m + 1) * (m + 1)

    for t in range(1, steps + 1):
        # --- selection ---
        for i in range(n):
            if mood[i] == 2:
                actions[i] = base[i]
                exper[i] = False
            elif mood[i] == 1:
                r = rng.random()
                if r < 1.0 - e15:
                    actions[i] = m
                    exper[i] = False
                else:
                    k = int((r - (1.0 - e15)) / e15 * m)
                    if k >= m:
                        k = m - 1
                    actions[i] = k
                    exper[i] = True
            else:
                r = rng.random()
                if exclude_baseline and base[i] < m:
                    s = m - 1
                else:
                    s = m
                if s == 0:
                    # lone acceptor equals the baseline: experiment mass folds
                    # into baseline play, matching action_distribution
                    if r < 1.0 - eps2:
                        actions[i] = base[i]
                        exper[i] = False
                    else:
                        actions[i] = m
                        exper[i] = True
                elif r < c0:
                    actions[i] = base[i]
                    exper[i] = False
                elif r < c0 + eps:
                    k = int((r - c0) / eps * s)
                    if k >= s:
                        k = s - 1
                    if exclude_baseline and base[i] < m and k >= base[i]:
                        k += 1
                    actions[i] = k
                    exper[i] = True
                else:
                    actions[i] = m
                    exper[i] = True

        # --- match resolution: each acceptor keeps its best proposal ---
        for j in range(m):
            holder[j] = -1
        for i in range(n):
            a = actions[i]
            if a < m:
                h = holder[a]
                if h < 0 or a_vals[a, i] > a_vals[a, h]:
                    holder[a] = i
        for i in range(n):
            partner[i] = m
        for j in range(m):
            if holder[j] >= 0:
                partner[holder[j]] = j

        # --- state updates, each from own event and utility only ---
        for i in range(n):
            if partner[i] < m:
                u = p_vals[i, partner[i]]
            else:
                u = 0.0
            if mood[i] == 2:
                if u >= ubar[i]:
                    mood[i] = 0
                else:
                    mood[i] = 1
                    base[i] = m
                    ubar[i] = 0.0
            elif mood[i] == 1:
                if exper[i]:
                    uc = u
                    if uc > 1.0:
                        uc = 1.0
                    if rng.random() < eps ** (f_int + f_slope * uc):
                        mood[i] = 0
                        base[i] = actions[i]
                        ubar[i] = u
            else:
                if not exper[i]:
                    if u >= ubar[i]:
                        ubar[i] = u
                    else:
                        mood[i] = 2
                elif u <= ubar[i]:
                    if not revert_keep:
                        ubar[i] = u
                else:
                    du = u - ubar[i]
                    if du > 1.0:
                        du = 1.0
                    if rng.random() < eps ** (g_int + g_slope * du):
                        base[i] = actions[i]
                        ubar[i] = u

        # --- bookkeeping ---
        mcode = np.int64(0)
        mult = np.int64(1)
        for i in range(n):
            mcode += partner[i] * mult
            mult *= m + 1
        if mcode == posm_code and first_posm < 0:
            first_posm = t
        if t > window_start:
            scode = np.int64(0)
            smult = np.int64(1)
            for i in range(n):
                uidx = 0
                for k in range(m + 1):
                    if util_levels[i, k] == ubar[i]:
                        uidx = k
                        break
                digit = (mood[i] * (m + 1) + base[i]) * (m + 1) + uidx
                scode += digit * smult
                smult *= state_base
            idx = t - window_start - 1
            match_codes_out[idx] = mcode
            state_codes_out[idx] = scode
    return first_posm


if _HAVE_NUMBA:
    _core_jit = njit(cache=True)(_core)
else:  # pragma: no cover
    _core_jit = _core


def simulate_core(*args, jit: bool = True):
    """Run the core loop, jitted when requested and available."""
    fn = _core_jit if (jit and _HAVE_NUMBA) else _core
    return fn(*args)
