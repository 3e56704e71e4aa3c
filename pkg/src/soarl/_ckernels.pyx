# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled rollout and Q-sweep kernels; mirrors ``_pykernels`` exactly."""

ctypedef long long i64

cdef enum:
    BUDGET = 0
    REACHED = 1
    RUNNING = 0
    TASK_COMPLETE = 1
    VIOLATION = 2
    MAX_STEPS = 3

cdef inline int _popcount(i64 x) nogil:
    cdef int c = 0
    while x:
        x &= x - 1
        c += 1
    return c


def rollout(double[:, ::1] q, i64 key_mode, i64[:, ::1] next_cell, i64[::1] cell_kind, i64[::1] cell_label,
            i64 pos, i64 flags, i64 t, i64 max_episode_steps, i64 budget,
            i64 stop_mode, i64 expected_mask, i64 forbidden_mask, double eps,
            double[::1] uniforms, i64[::1] rand_actions,
            i64 required_mask, double step_cost, double task_reward, double penalty,
            i64[::1] out_key, i64[::1] out_action, double[::1] out_reward, i64[::1] out_next_key):
    cdef i64 start_sym = flags & 15
    cdef double total = 0.0
    cdef int stop = BUDGET
    cdef int env = RUNNING
    cdef i64 n = 0
    cdef i64 key, a, j, before, kind, newly, sym
    cdef double best, r
    with nogil:
        while n < budget and t < max_episode_steps:
            if key_mode == 0:
                key = pos
            else:
                key = pos * 16 + (flags & 15)
            if uniforms[n] < eps:
                a = rand_actions[n]
            else:
                a = 0
                best = q[key, 0]
                for j in range(1, 4):
                    if q[key, j] > best:
                        best = q[key, j]
                        a = j
            pos = next_cell[pos, a]
            before = flags
            kind = cell_kind[pos]
            if kind == 1:
                if not (flags & (1 | 4)):
                    flags |= 1
            elif kind == 2:
                if not (flags & (2 | 8)):
                    flags |= 2
            elif kind == 3:
                if flags & 1:
                    flags = (flags & ~1) | 4
                if flags & 2:
                    flags = (flags & ~2) | 8
            t += 1
            newly = (flags & ~before) & required_mask
            r = step_cost + task_reward * _popcount(newly)
            if (flags | cell_label[pos]) & forbidden_mask:
                r = penalty
                env = VIOLATION
            elif (flags & required_mask) == required_mask:
                env = TASK_COMPLETE
            elif t >= max_episode_steps:
                env = MAX_STEPS
            out_key[n] = key
            if key_mode == 0:
                out_next_key[n] = pos
            else:
                out_next_key[n] = pos * 16 + (flags & 15)
            out_action[n] = a
            out_reward[n] = r
            total += r
            n += 1
            if env != VIOLATION:
                sym = flags & 15
                if stop_mode == 0:
                    if sym != start_sym:
                        stop = REACHED
                elif (sym & expected_mask) == expected_mask:
                    stop = REACHED
            if stop == REACHED or env != RUNNING:
                break
    return n, pos, flags, t, total, stop, env


def q_sweep(double[:, ::1] q, i64[::1] keys, i64[::1] actions, double[::1] rewards, i64[::1] next_keys,
            unsigned char[::1] terminals, i64 n, double alpha, double gamma):
    cdef i64 i, k, a, nk, j
    cdef double target, m, old
    with nogil:
        i = n - 1
        while i >= 0:
            k = keys[i]
            a = actions[i]
            target = rewards[i]
            if not terminals[i]:
                nk = next_keys[i]
                m = q[nk, 0]
                for j in range(1, 4):
                    if q[nk, j] > m:
                        m = q[nk, j]
                target = target + gamma * m
            old = q[k, a]
            q[k, a] = old + alpha * (target - old)
            i -= 1
