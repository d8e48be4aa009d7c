"""Joint (service-state, buffer-level) Markov chain of a finite FIFO queue.

States are ordered row-major: service state outer, buffer level inner, so
state ``(x, q)`` has index ``x * (M + 1) + q`` and block ``(x, y)`` of the
transition matrix is the buffer transition matrix of state ``x`` scaled by
the channel transition probability ``P[x, y]``.

Within a slot the queue is served first and arrivals join afterwards:
``q' = min(M, max(0, q - c) + a)``; arrivals that do not fit are dropped.
Arrivals may depend on the service state (one PMF per state), which is how
the relay queue sees source departures that follow the source channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, connected_components
from scipy.sparse.linalg import splu

from .errors import ChainStructureError, InvalidParameterError
from .queueing import service_counts

DENSE_LIMIT = 1024


@dataclass(frozen=True, eq=False)
class JointChain:
    matrix: sp.csr_matrix
    channel: np.ndarray
    arrivals: np.ndarray  # (n_service, A + 1): arrival PMF in each service state
    rates: np.ndarray
    count_base: np.ndarray
    count_frac: np.ndarray
    buffer: int
    states: np.ndarray  # label of each service state (channel index, or index pairs)

    @property
    def n_service(self):
        return self.channel.shape[0]

    @property
    def n_states(self):
        return self.matrix.shape[0]

    def index(self, x, q):
        return x * (self.buffer + 1) + q

    def dense(self):
        return self.matrix.toarray()


@dataclass(frozen=True, eq=False)
class StationaryDistribution:
    pi: np.ndarray
    residual: float
    method: str
    iterations: int = 0


def _level_transitions(arrivals, buffer):
    """``R[b, l]``: probability of ending at level ``l`` from post-service level ``b``."""
    levels = buffer + 1
    tail = np.concatenate([np.cumsum(arrivals[::-1])[::-1], [0.0]])
    r = np.zeros((levels, levels))
    for b in range(levels):
        width = buffer - b  # arrivals that land strictly below the cap
        take = min(width, arrivals.size)
        r[b, b : b + take] = arrivals[:take]
        r[b, buffer] = tail[width] if width < tail.size else 0.0
    return r


def _buffer_matrices(arrivals, base, frac, buffer):
    """Buffer transition matrix of every service state."""
    levels = np.arange(buffer + 1)
    cache = {}
    out = np.empty((base.size, buffer + 1, buffer + 1))
    for x in range(base.size):
        key = arrivals[x].tobytes()
        if key not in cache:
            cache[key] = _level_transitions(arrivals[x], buffer)
        r = cache[key]
        lo = r[np.maximum(levels - base[x], 0)]
        hi = r[np.maximum(levels - base[x] - 1, 0)]
        out[x] = (1.0 - frac[x]) * lo + frac[x] * hi
    return out


def _as_pmf_rows(arrivals, n):
    arr = np.asarray(arrivals, dtype=float)
    if arr.ndim == 1:
        arr = np.broadcast_to(arr, (n, arr.size))
    if arr.ndim != 2 or arr.shape[0] != n or arr.shape[1] == 0:
        raise InvalidParameterError(f"arrival PMF must be a vector or one row per service state, got shape {arr.shape}")
    if np.any(arr < 0) or np.any(np.abs(arr.sum(axis=1) - 1.0) > 1e-9):
        raise InvalidParameterError("arrival PMFs must be nonnegative and sum to one")
    return np.ascontiguousarray(arr)


def build_chain(arrivals, rates, channel, buffer, slot=1.0, states=None):
    """Assemble the joint transition matrix.

    ``arrivals`` is the per-slot arrival PMF (shared, or one row per service
    state), ``rates`` the service rate of each service state (packets per
    time unit) and ``channel`` the service-state transition matrix.
    """
    rates = np.asarray(rates, dtype=float)
    channel = np.asarray(channel, dtype=float)
    if channel.ndim != 2 or channel.shape[0] != channel.shape[1]:
        raise InvalidParameterError("channel transition matrix must be square")
    if rates.shape != (channel.shape[0],):
        raise InvalidParameterError(
            f"need one service rate per channel state: {rates.size} rates for {channel.shape[0]} states"
        )
    if int(buffer) != buffer or buffer < 0:
        raise InvalidParameterError("buffer must be a nonnegative integer")
    k, lv = channel.shape[0], int(buffer) + 1
    arrivals = _as_pmf_rows(arrivals, k)
    base, frac = service_counts(rates, slot)
    blocks = _buffer_matrices(arrivals, base, frac, int(buffer))
    diag = sp.block_diag([sp.csr_matrix(b) for b in blocks], format="csr")
    mat = (diag @ sp.kron(sp.csr_matrix(channel), sp.identity(lv, format="csr"), format="csr")).tocsr()
    mat.eliminate_zeros()
    return JointChain(
        matrix=mat,
        channel=channel,
        arrivals=arrivals,
        rates=rates,
        count_base=base,
        count_frac=frac,
        buffer=int(buffer),
        states=np.arange(k) if states is None else np.asarray(states),
    )


def build_modulated_chain(arrivals_by_mod, mod_channel, rates, channel, buffer, slot=1.0, mod_states=None, states=None):
    """Chain whose arrivals follow an external Markov state.

    The service state is the pair ``(z, x)`` of modulating state ``z``
    (driving ``arrivals_by_mod[z]``) and channel state ``x`` (driving
    ``rates[x]``); the pair moves with ``kron(mod_channel, channel)``.
    """
    mod_channel = np.asarray(mod_channel, dtype=float)
    channel = np.asarray(channel, dtype=float)
    arr = np.asarray(arrivals_by_mod, dtype=float)
    nz, nx = mod_channel.shape[0], channel.shape[0]
    if arr.ndim != 2 or arr.shape[0] != nz:
        raise InvalidParameterError("need one arrival PMF per modulating state")
    mod_states = np.arange(nz) if mod_states is None else np.asarray(mod_states)
    states = np.arange(nx) if states is None else np.asarray(states)
    labels = np.stack([np.repeat(mod_states, nx), np.tile(states, nz)], axis=1)
    return build_chain(
        np.repeat(arr, nx, axis=0),
        np.tile(np.asarray(rates, dtype=float), nz),
        np.kron(mod_channel, channel),
        buffer,
        slot=slot,
        states=labels,
    )


def _matrix(chain):
    if isinstance(chain, JointChain):
        return chain.matrix
    if sp.issparse(chain):
        return sp.csr_matrix(chain)
    return sp.csr_matrix(np.asarray(chain, dtype=float))


def is_irreducible(chain):
    """Strong connectivity of the transition graph.

    Returns ``(True, None)`` or ``(False, (i, j))`` where state ``j`` cannot
    be reached from state ``i``.
    """
    graph = _matrix(chain).copy()
    graph.data = (graph.data > 0).astype(float)
    graph.eliminate_zeros()
    n = graph.shape[0]
    n_comp, _ = connected_components(graph, directed=True, connection="strong")
    if n_comp == 1:
        return True, None
    reach = np.zeros(n, dtype=bool)
    reach[breadth_first_order(graph, 0, directed=True, return_predecessors=False)] = True
    if not reach.all():
        return False, (0, int(np.flatnonzero(~reach)[0]))
    back = np.zeros(n, dtype=bool)
    back[breadth_first_order(graph.T.tocsr(), 0, directed=True, return_predecessors=False)] = True
    return False, (int(np.flatnonzero(~back)[0]), 0)


def residual(pi, chain):
    """``max |pi P - pi|``."""
    p = np.asarray(pi.pi if isinstance(pi, StationaryDistribution) else pi)
    return float(np.max(np.abs(_matrix(chain).T @ p - p)))


def power_iteration(chain, tol=1e-12, max_iter=1_000_000, start=None, check_every=64):
    """Iterate ``pi <- pi P`` until successive iterates differ by at most ``tol``."""
    pt = _matrix(chain).T.tocsr()
    n = pt.shape[0]
    pi = np.full(n, 1.0 / n) if start is None else np.asarray(start, dtype=float).copy()
    for it in range(1, max_iter + 1):
        nxt = pt @ pi
        if it % check_every == 0:
            nxt /= nxt.sum()
            if np.max(np.abs(nxt - pi)) <= tol:
                return nxt, it
        pi = nxt
    raise ChainStructureError(f"power iteration did not converge in {max_iter} steps")


def _solve_dense(mat):
    n = mat.shape[0]
    a = mat.T - np.eye(n)
    a[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    return np.linalg.solve(a, rhs)


def _solve_sparse(mat, pin):
    # fix component ``pin`` to one and solve the remaining balance equations
    n = mat.shape[0]
    g = (mat.T - sp.identity(n, format="csr")).tocsc()
    keep = np.delete(np.arange(n), pin)
    lu = splu(g[keep][:, keep].tocsc(), permc_spec="COLAMD")
    x = np.empty(n)
    x[keep] = lu.solve(-g[keep][:, [pin]].toarray().ravel())
    x[pin] = 1.0
    return x


def _heavy_state(mat, steps=64):
    """A state with large stationary mass, located by a short power run."""
    pt = mat.T.tocsr()
    pi = np.full(mat.shape[0], 1.0 / mat.shape[0])
    for _ in range(steps):
        pi = pt @ pi
    return int(np.argmax(pi))


def stationary(chain, tol=1e-10, check=True):
    """Stationary distribution by a direct solve, falling back to power iteration."""
    if check:
        ok, witness = is_irreducible(chain)
        if not ok:
            raise ChainStructureError(f"chain is reducible: state {witness[1]} unreachable from state {witness[0]}")
    return _solve(_matrix(chain), tol)


def closed_class(chain):
    """States of the unique closed communicating class.

    Every other state is transient and carries no stationary mass.  More
    than one closed class means the stationary law is not unique.
    """
    graph = _matrix(chain).copy()
    graph.data = (graph.data > 0).astype(float)
    graph.eliminate_zeros()
    n_comp, labels = connected_components(graph, directed=True, connection="strong")
    if n_comp == 1:
        return np.arange(graph.shape[0])
    rows, cols = graph.nonzero()
    leaves = np.zeros(n_comp, dtype=bool)
    leaves[labels[rows][labels[rows] != labels[cols]]] = True
    closed = np.flatnonzero(~leaves)
    if closed.size != 1:
        raise ChainStructureError(f"chain has {closed.size} closed classes; the stationary law is not unique")
    return np.flatnonzero(labels == closed[0])


def recurrent_stationary(chain, tol=1e-10):
    """Stationary distribution of a chain with one closed class and possibly transient states."""
    mat = _matrix(chain)
    keep = closed_class(chain)
    if keep.size == mat.shape[0]:
        return _solve(mat, tol)
    sub = _solve(mat[keep][:, keep], tol)
    pi = np.zeros(mat.shape[0])
    pi[keep] = sub.pi
    return StationaryDistribution(pi=pi, residual=residual(pi, mat), method=sub.method, iterations=sub.iterations)


def _solve(mat, tol):
    n = mat.shape[0]
    pi = None
    try:
        if n <= DENSE_LIMIT:
            pi, method = _solve_dense(mat.toarray()), "direct"
        else:
            pi, method = _solve_sparse(mat, _heavy_state(mat)), "sparse-direct"
        pi = np.clip(pi, 0.0, None)
        pi /= pi.sum()
        res = residual(pi, mat)
        if res <= tol:
            return StationaryDistribution(pi=pi, residual=res, method=method)
    except (np.linalg.LinAlgError, RuntimeError):
        pi = None
    pi, its = power_iteration(mat, start=pi)
    return StationaryDistribution(pi=pi, residual=residual(pi, mat), method="power", iterations=its)


def _grid(pi, chain):
    p = np.asarray(pi.pi if isinstance(pi, StationaryDistribution) else pi)
    return p.reshape(chain.n_service, chain.buffer + 1)


def marginals(pi, chain):
    """``(buffer-level marginal, service-state marginal)``."""
    grid = _grid(pi, chain)
    return grid.sum(axis=0), grid.sum(axis=1)


def expected_arrivals(pi, chain):
    mass = _grid(pi, chain).sum(axis=1)
    return float(mass @ (chain.arrivals @ np.arange(chain.arrivals.shape[1])))


def expected_drops(pi, chain):
    """Mean number of arrivals per slot that find the buffer full."""
    grid = _grid(pi, chain)
    m = chain.buffer
    levels = np.arange(m + 1)
    a = np.arange(chain.arrivals.shape[1])
    total = 0.0
    for x in range(chain.n_service):
        for c, w in ((chain.count_base[x], 1.0 - chain.count_frac[x]), (chain.count_base[x] + 1, chain.count_frac[x])):
            if w == 0:
                continue
            after = np.maximum(levels - c, 0)
            over = np.maximum(after[:, None] + a[None, :] - m, 0)
            total += w * float(grid[x] @ over @ chain.arrivals[x])
    return total


def departure_pmfs(pi, chain):
    """Per-slot departure PMF conditioned on each service state.

    A service state with no stationary mass gets the PMF of a saturated
    queue.
    """
    grid = _grid(pi, chain)
    kmax = int(min(chain.buffer, chain.count_base.max() + 1))
    levels = np.arange(chain.buffer + 1)
    out = np.zeros((chain.n_service, kmax + 1))
    for x in range(chain.n_service):
        for c, w in ((chain.count_base[x], 1.0 - chain.count_frac[x]), (chain.count_base[x] + 1, chain.count_frac[x])):
            if w == 0:
                continue
            np.add.at(out[x], np.minimum(levels, c), w * grid[x])
            if grid[x].sum() <= 0:
                out[x, min(c, kmax)] += w
        out[x] /= out[x].sum()
    return out


def expected_departures(pi, chain):
    grid = _grid(pi, chain)
    levels = np.arange(chain.buffer + 1)
    total = 0.0
    for x in range(chain.n_service):
        c, f = chain.count_base[x], chain.count_frac[x]
        served = (1.0 - f) * np.minimum(levels, c) + f * np.minimum(levels, c + 1)
        total += float(grid[x] @ served)
    return total


def dump_chain(path, chain, dist):
    """Write ``chi_index,buffer,pi`` rows, a blank line, then the transition matrix."""
    pi = dist.pi
    dense = chain.dense()
    with open(path, "w", newline="") as fh:
        fh.write("chi_index,buffer,pi\n")
        for x in range(chain.n_service):
            label = chain.states[x]
            label = ":".join(str(int(v)) for v in np.atleast_1d(label))
            for q in range(chain.buffer + 1):
                fh.write(f"{label},{q},{pi[chain.index(x, q)]:.9g}\n")
        fh.write("\n")
        for row in dense:
            fh.write(",".join(f"{v:.9g}" for v in row) + "\n")
