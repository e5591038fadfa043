"""Proportional-fair allocation of APs and mirrors to users.

Each user is served by one AP; users sharing an AP split its airtime
equally, which is the exact maximiser of sum(ln(tau_k * r_k)) under
sum(tau_k) = 1.  Mirrors are assigned to at most one user each and only
reflect that user's serving AP.  The objective is

    U = sum_k ln(rate_k + eps)

with ``eps`` from the solver options so that zero-rate users still rank.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .channel import GainTensor, build_gain_tensor
from .link import branch_gains, snr, spectral_efficiency

UNASSIGNED = -1


class SearchSpaceError(ValueError):
    """An exhaustive search would exceed the configured guard."""


@dataclass(frozen=True)
class Assignment:
    ap_of_user: Tuple[int, ...]
    user_of_mirror: Tuple[int, ...]
    time_fraction: Tuple[float, ...]

    def mirrors_of(self, user):
        return [m for m, u in enumerate(self.user_of_mirror) if u == user]


@dataclass(frozen=True)
class UtilityReport:
    rates: Tuple[float, ...]
    sum_rate: float
    log_utility: float
    branches: Tuple[int, ...]
    snr: Tuple[float, ...]


def sample_blockage(ratio: float, dims, rng_seed) -> np.ndarray:
    """Binary (users x APs) mask; each LoS link is blocked (0) with probability ``ratio``."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("blockage ratio must lie in [0, 1]")
    rng = np.random.default_rng(rng_seed)
    return (rng.random(dims) >= ratio).astype(np.int8)


def time_fractions(ap_of_user):
    ap_of_user = list(ap_of_user)
    counts = {}
    for l in ap_of_user:
        counts[l] = counts.get(l, 0) + 1
    return tuple(1.0 / counts[l] for l in ap_of_user)


class _Link:
    """Scenario parameters needed to turn gains into rates."""

    def __init__(self, tensor: GainTensor, mask, scenario):
        self.tensor = tensor
        K, L = tensor.num_users, tensor.num_aps
        if len(scenario.aps) != L:
            raise ValueError("scenario AP count does not match the gain tensor")
        self.mask = np.ones((K, L), dtype=np.int8) if mask is None else np.asarray(mask)
        if self.mask.shape != (K, L):
            raise ValueError(f"blockage mask shape {self.mask.shape} != {(K, L)}")
        if not np.isin(self.mask, (0, 1)).all():
            raise ValueError("blockage mask must be binary")
        self.p_t = np.array([ap.transmit_power_w for ap in scenario.aps])
        self.resp = scenario.adr.responsivity_a_per_w
        self.noise = scenario.noise
        self.eps = scenario.solver.utility_epsilon
        self.guard = scenario.solver.search_guard

    def gains(self, k, l, mirrors=()):
        return branch_gains(self.tensor, k, l, mirrors, self.mask[k, l])

    def rate_from_gains(self, g, l, tau):
        """``(rate, branch, snr)`` for a vector of branch gains."""
        b = int(np.argmax(g))
        s = snr(float(g[b]), self.p_t[l], self.resp, self.noise)
        return tau * spectral_efficiency(s), b, s

    def full_rate_table(self):
        """Full-airtime rate of every user on every AP, mirrors unassigned."""
        t = self.tensor
        g = self.mask[:, None, :] * t.los + t.diff                       # (K, B, L)
        best = g.max(axis=1)                                             # (K, L)
        s = snr(best, self.p_t[None, :], self.resp, self.noise)
        return spectral_efficiency(s)


def evaluate(assignment: Assignment, tensor: GainTensor, mask, scenario) -> UtilityReport:
    """Per-user rates, sum rate and log utility of an assignment."""
    link = _Link(tensor, mask, scenario)
    rates, branches, snrs = [], [], []
    for k, l in enumerate(assignment.ap_of_user):
        g = link.gains(k, l, assignment.mirrors_of(k))
        r, b, s = link.rate_from_gains(g, l, assignment.time_fraction[k])
        rates.append(float(r))
        branches.append(b)
        snrs.append(float(s))
    util = float(np.sum(np.log(np.array(rates) + link.eps)))
    return UtilityReport(tuple(rates), float(sum(rates)), util, tuple(branches), tuple(snrs))


def _lex_maps(start, stop, base, width):
    idx = np.arange(start, stop, dtype=np.int64)
    powers = base ** np.arange(width - 1, -1, -1, dtype=np.int64)
    return (idx[:, None] // powers[None, :]) % base


def allocate_aps_exhaustive(tensor: GainTensor, mask, scenario, chunk=1 << 16):
    """AP-of-user map maximising log utility with equal airtime and no mirrors.

    Maps are enumerated in lexicographic order and the first maximiser wins.
    """
    link = _Link(tensor, mask, scenario)
    K, L = tensor.num_users, tensor.num_aps
    total = L ** K
    if total > link.guard:
        raise SearchSpaceError(f"{L}^{K} AP maps exceed the search guard {link.guard}")
    r = link.full_rate_table()
    users = np.arange(K)
    best_u, best_map = -np.inf, None
    for start in range(0, total, chunk):
        maps = _lex_maps(start, min(start + chunk, total), L, K)          # (n, K)
        counts = (maps[:, :, None] == np.arange(L)).sum(axis=1)          # (n, L)
        share = np.take_along_axis(counts, maps, axis=1)                 # (n, K)
        rates = r[users[None, :], maps] / share
        u = np.log(rates + link.eps).sum(axis=1)
        i = int(np.argmax(u))
        if u[i] > best_u:
            best_u, best_map = u[i], maps[i]
    return tuple(int(l) for l in best_map)


class _MirrorState:
    """Incremental bookkeeping of per-user composite gains during mirror search.

    With ``branch`` set, user k is scored on branch ``branch[k]`` only
    instead of its best branch.
    """

    def __init__(self, link: _Link, ap_of_user, owner, branch=None):
        self.link = link
        self.ap = list(ap_of_user)
        self.tau = time_fractions(ap_of_user)
        self.branch = branch
        K = len(self.ap)
        self.g = [link.gains(k, self.ap[k], [m for m, u in enumerate(owner) if u == k])
                  for k in range(K)]
        self.rates = np.array([self._rate(k, self.g[k]) for k in range(K)])

    def _rate(self, k, g):
        if self.branch is None:
            return self.link.rate_from_gains(g, self.ap[k], self.tau[k])[0]
        return self.link.rate_from_gains(g[self.branch[k]:self.branch[k] + 1], self.ap[k],
                                         self.tau[k])[0]

    def mirror_vec(self, k, m):
        return self.link.tensor.irs[k, :, self.ap[k], m]

    def utility(self, rates=None):
        r = self.rates if rates is None else rates
        return float(np.log(r + self.link.eps).sum())

    def _moved(self, moves):
        g = {}
        for m, owner, cand in moves:
            if owner == cand:
                continue
            for k, sign in ((owner, -1.0), (cand, 1.0)):
                if k != UNASSIGNED:
                    g[k] = g.get(k, self.g[k]) + sign * self.mirror_vec(k, m)
        return g

    def trial(self, moves):
        """Rates after applying ``(mirror, owner, cand)`` moves at once."""
        rates = self.rates.copy()
        for k, g in self._moved(moves).items():
            rates[k] = self._rate(k, g)
        return rates

    def move(self, moves, rates):
        for k, g in self._moved(moves).items():
            self.g[k] = g
        self.rates = rates


# cap on ADR branch hypotheses tried by the greedy mirror stage
MAX_BRANCH_HYPOTHESES = 4096


def _local_search(state, owner, useful, candidates, pairs, trace=None):
    """Improve ``owner`` in place by single-mirror moves, then (optionally)
    joint moves of mirror pairs; stops when neither improves the utility."""

    def best_of(options):
        best, best_u, best_r = None, state.utility(), None
        for moves in options:
            r = state.trial(moves)
            u = state.utility(r)
            if u > best_u:
                best, best_u, best_r = moves, u, r
        return best, best_r

    def apply(moves, rates):
        state.move(moves, rates)
        for m, _, c in moves:
            owner[m] = c

    while True:
        changed = True
        while changed:
            changed = False
            for m in useful:
                cur = owner[m]
                moves, r = best_of([[(m, cur, c)] for c in candidates if c != cur])
                if moves is not None:
                    apply(moves, r)
                    changed = True
                if trace is not None:
                    trace.append(state.utility())
        if not pairs:
            return
        improved = False
        for i, m1 in enumerate(useful):
            for m2 in useful[i + 1:]:
                o1, o2 = owner[m1], owner[m2]
                moves, r = best_of([[(m1, o1, c1), (m2, o2, c2)] for c1 in candidates
                                    for c2 in candidates if c1 != o1 and c2 != o2])
                if moves is not None:
                    apply(moves, r)
                    improved = True
                    if trace is not None:
                        trace.append(state.utility())
        if not improved:
            return


def allocate_mirrors_greedy(tensor: GainTensor, mask, ap_of_user, scenario, trace=None):
    """Multi-pass greedy mirror assignment with the AP map held fixed.

    Mirrors are visited in index order; each goes to the candidate (a user
    or "unassigned") with the highest resulting utility, keeping its current
    owner on ties.  Passes repeat until nothing moves, then joint moves of
    mirror pairs are tried.

    Each user keeps only its best ADR branch, so a mirror can be worthless
    alone yet useful next to others on a weaker branch.  To escape such
    traps the greedy pass is rerun once per branch hypothesis (one branch
    per user, scored on that branch alone); the best outcome under the true
    objective is polished by the same local search and kept if it beats the
    incumbent.  If ``trace`` is a list, the incumbent utility after every
    decision is appended to it.
    """
    link = _Link(tensor, mask, scenario)
    K, M = tensor.num_users, tensor.num_mirrors
    owner = [UNASSIGNED] * M
    state = _MirrorState(link, ap_of_user, owner)
    # mirrors with no path towards any user's serving AP can never be useful
    useful = [m for m in range(M)
              if any(state.mirror_vec(k, m).any() for k in range(K))]
    candidates = [UNASSIGNED] + list(range(K))
    _local_search(state, owner, useful, candidates, pairs=True, trace=trace)
    best, best_u = tuple(owner), state.utility()

    base = [link.gains(k, ap_of_user[k]) for k in range(K)]
    options = []
    for k in range(K):
        reach = {b for m in useful for b in np.flatnonzero(state.mirror_vec(k, m))}
        options.append(sorted(reach | {int(np.argmax(base[k]))}))
    if np.prod([len(o) for o in options]) > MAX_BRANCH_HYPOTHESES:
        return best
    for branch in itertools.product(*options):
        o = [UNASSIGNED] * M
        _local_search(_MirrorState(link, ap_of_user, o, branch), o, useful, candidates, pairs=False)
        true = _MirrorState(link, ap_of_user, o)
        if true.utility() <= best_u:
            continue
        _local_search(true, o, useful, candidates, pairs=True)
        best, best_u = tuple(o), true.utility()
        if trace is not None:
            trace.append(best_u)
    return best


def allocate_mirrors_exhaustive(tensor: GainTensor, mask, ap_of_user, scenario):
    """Utility-maximising mirror map by full enumeration of (K+1)^M options."""
    link = _Link(tensor, mask, scenario)
    K, M = tensor.num_users, tensor.num_mirrors
    if M == 0:
        return ()
    total = (K + 1) ** M
    if total > link.guard:
        raise SearchSpaceError(f"{K + 1}^{M} mirror maps exceed the search guard {link.guard}")
    tau = time_fractions(ap_of_user)
    ap = list(ap_of_user)
    base = np.array([link.gains(k, ap[k]) for k in range(K)])              # (K, B)
    vec = np.array([tensor.irs[k, :, ap[k], :] for k in range(K)])         # (K, B, M)
    best_u, best = -np.inf, None
    for start in range(0, total, 1 << 14):
        maps = _lex_maps(start, min(start + (1 << 14), total), K + 1, M) - 1   # (n, M), -1 first
        onehot = (maps[:, None, :] == np.arange(K)[None, :, None])          # (n, K, M)
        g = base[None] + np.einsum("nkm,kbm->nkb", onehot, vec)
        b = g.max(axis=2)                                                    # (n, K)
        s = snr(b, link.p_t[ap][None, :], link.resp, link.noise)
        rates = np.asarray(tau)[None, :] * spectral_efficiency(s)
        u = np.log(rates + link.eps).sum(axis=1)
        i = int(np.argmax(u))
        if u[i] > best_u:
            best_u, best = u[i], maps[i]
    return tuple(int(x) for x in best)


def solve(scenario, mask=None, tensor: Optional[GainTensor] = None):
    """Two-stage allocation: APs by exhaustive search, then mirrors.

    Returns ``(Assignment, UtilityReport)``.  The gain tensor is built from
    the scenario unless one is supplied.
    """
    if tensor is None:
        tensor = build_gain_tensor(scenario)
    ap_map = allocate_aps_exhaustive(tensor, mask, scenario)
    K, M = tensor.num_users, tensor.num_mirrors
    mode = scenario.solver.mirror_search
    if mode == "auto":
        mode = "exhaustive" if (K + 1) ** M <= scenario.solver.search_guard else "greedy"
    if M == 0:
        mirrors = ()
    elif mode == "exhaustive":
        mirrors = allocate_mirrors_exhaustive(tensor, mask, ap_map, scenario)
    else:
        mirrors = allocate_mirrors_greedy(tensor, mask, ap_map, scenario)
    assignment = Assignment(ap_map, mirrors, time_fractions(ap_map))
    return assignment, evaluate(assignment, tensor, mask, scenario)
