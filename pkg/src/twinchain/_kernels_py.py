"""Pure-numpy round-timing kernel (fallback for the compiled ``_kernels``)."""

import numpy as np


def round_times(t_proc, accept, prep_delay, commit_delay, quorum):
    """Three-phase quorum timing for one round.

    ``t_proc[j]`` is when validator ``j`` starts processing the proposal,
    ``accept[j]`` whether it votes for it, and ``*_delay[j, k]`` the transfer
    time of the vote sent by ``j`` to ``k``.  A node counts its own vote at
    zero delay.  Returns ``(prepared, committed, adopted)``: accepting nodes
    get finite ``prepared``/``committed`` once ``quorum`` votes have reached
    them; rejecting (but reachable) nodes get ``adopted``, the time they see
    a quorum of commit votes.  Unreachable entries are ``inf``.
    """
    t_proc = np.asarray(t_proc, dtype=np.float64)
    acc = np.asarray(accept, dtype=bool) & np.isfinite(t_proc)
    n = t_proc.shape[0]
    inf = np.inf
    if quorum < 1 or quorum > n or acc.sum() < quorum:
        full = np.full(n, inf)
        return full, full.copy(), full.copy()
    idx = np.arange(n)

    arr = np.where(acc[:, None], t_proc[:, None] + prep_delay, inf)
    arr[idx, idx] = np.where(acc, t_proc, inf)
    kth = np.partition(arr, quorum - 1, axis=0)[quorum - 1]
    prepared = np.where(acc, np.maximum(kth, t_proc), inf)

    arr = np.where(acc[:, None], prepared[:, None] + commit_delay, inf)
    arr[idx, idx] = prepared
    kth = np.partition(arr, quorum - 1, axis=0)[quorum - 1]
    committed = np.where(acc, np.maximum(kth, prepared), inf)
    reachable = ~acc & np.isfinite(t_proc)
    adopted = np.where(reachable, np.maximum(kth, t_proc), inf)
    return prepared, committed, adopted
