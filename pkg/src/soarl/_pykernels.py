"""Pure-Python kernels. Must stay bit-for-bit equivalent to ``_ckernels.pyx``."""

# stop codes
BUDGET, REACHED = 0, 1
# environment codes
RUNNING, TASK_COMPLETE, VIOLATION, MAX_STEPS = 0, 1, 2, 3

_COFFEE, _MAIL, _OFFICE = 1, 2, 3
_HC, _HM, _DC, _DM = 1, 2, 4, 8
_TASK_BITS = 15


def _popcount(x):
    return bin(x).count("1")


def rollout(q, key_mode, next_cell, cell_kind, cell_label,
            pos, flags, t, max_episode_steps, budget,
            stop_mode, expected_mask, forbidden_mask, eps,
            uniforms, rand_actions,
            required_mask, step_cost, task_reward, penalty,
            out_key, out_action, out_reward, out_next_key):
    nxt = next_cell.tolist()
    kinds = cell_kind.tolist()
    labels = cell_label.tolist()
    us = uniforms.tolist()
    ras = rand_actions.tolist()
    start_sym = flags & _TASK_BITS
    total = 0.0
    stop = BUDGET
    env = RUNNING
    n = 0
    while n < budget and t < max_episode_steps:
        key = pos if key_mode == 0 else pos * 16 + (flags & _TASK_BITS)
        if us[n] < eps:
            a = ras[n]
        else:
            row = q[key].tolist()
            a = 0
            best = row[0]
            for j in range(1, 4):
                if row[j] > best:
                    best = row[j]
                    a = j
        pos = nxt[pos][a]
        before = flags
        kind = kinds[pos]
        if kind == _COFFEE:
            if not flags & (_HC | _DC):
                flags |= _HC
        elif kind == _MAIL:
            if not flags & (_HM | _DM):
                flags |= _HM
        elif kind == _OFFICE:
            if flags & _HC:
                flags = (flags & ~_HC) | _DC
            if flags & _HM:
                flags = (flags & ~_HM) | _DM
        t += 1
        newly = (flags & ~before) & required_mask
        r = step_cost + task_reward * _popcount(newly)
        if (flags | labels[pos]) & forbidden_mask:
            r = penalty
            env = VIOLATION
        elif (flags & required_mask) == required_mask:
            env = TASK_COMPLETE
        elif t >= max_episode_steps:
            env = MAX_STEPS
        out_key[n] = key
        out_action[n] = a
        out_reward[n] = r
        out_next_key[n] = pos if key_mode == 0 else pos * 16 + (flags & _TASK_BITS)
        total += r
        n += 1
        if env != VIOLATION:
            sym = flags & _TASK_BITS
            if stop_mode == 0:
                if sym != start_sym:
                    stop = REACHED
            elif (sym & expected_mask) == expected_mask:
                stop = REACHED
        if stop == REACHED or env != RUNNING:
            break
    return n, pos, flags, t, total, stop, env


def q_sweep(q, keys, actions, rewards, next_keys, terminals, n, alpha, gamma):
    """Backward sweep of one-step Q-learning updates over a stored trajectory."""
    for i in range(n - 1, -1, -1):
        k = int(keys[i])
        a = int(actions[i])
        target = float(rewards[i])
        if not terminals[i]:
            row = q[int(next_keys[i])]
            m = float(row[0])
            for j in range(1, 4):
                v = float(row[j])
                if v > m:
                    m = v
            target = target + gamma * m
        old = float(q[k, a])
        q[k, a] = old + alpha * (target - old)
