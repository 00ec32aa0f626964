"""Sum-rate maximization over zero-forcing precoder gains under per-AP
peak-amplitude and per-user QoS constraints.

With H the K x M channel matrix (K <= M, full row rank) the precoder is
W = pinv(H) diag(g), so user k sees an interference-free amplitude g_k
and a rate

    R(g) = 0.5 * ln(1 + 2 g^2 / (pi e N0 B))      [nats/s/Hz]

(the usual intensity-modulation capacity lower bound). The per-AP
amplitude headroom limits the absolute row sums of W:

    sum_k |pinv(H)_{mk}| g_k <= delta     for every AP m,

and QoS requires R(g_k) >= r_th, i.e. g_k >= g_min(r_th).

The objective is concave in t = g^2 while the headroom constraints turn
reverse-convex, so the solver iterates a convex-concave scheme: each
sqrt(t_k) in the constraints is replaced by its first-order tangent at
the current iterate. The tangent over-estimates the concave sqrt, hence
every subproblem-feasible point is feasible for the true problem and
the objective trace ascends monotonically. Each concave subproblem
(smooth objective, linear constraints) is solved with a log-barrier
Newton method. Multi-start guards against the nonconvexity; an
exhaustive grid oracle covers K <= 2 for verification.
"""

import time
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .dataset import derive_seed

_RATE_COEFF = lambda noise_term: 2.0 / (np.pi * np.e * noise_term)  # noqa: E731

_STREAM_STARTS = 31


class RankDeficientChannelError(ValueError):
    def __init__(self, message: str, null_weights=None):
        super().__init__(message)
        self.null_weights = null_weights


class InfeasibleProblemError(RuntimeError):
    """QoS corner point infeasible for the admitted user set."""


class SubproblemError(RuntimeError):
    """Inner convex solve failed to reach tolerance within budget."""


@dataclass
class ProblemSpec:
    channel: np.ndarray   # (K, M) nonnegative gains
    delta: float          # per-AP amplitude headroom, A
    noise_term: float     # N0 * B, A^2
    r_th: float           # QoS threshold, nats/s/Hz

    def __post_init__(self):
        self.channel = np.atleast_2d(np.asarray(self.channel, dtype=float))
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.noise_term <= 0:
            raise ValueError("noise_term must be positive")
        if self.r_th < 0:
            raise ValueError("r_th must be nonnegative")
        if self.channel.shape[0] > self.channel.shape[1]:
            raise ValueError("zero-forcing needs K <= M")
        if not np.all(np.isfinite(self.channel)):
            raise ValueError("channel gains must be finite")


@dataclass
class CcpOptions:
    max_iter: int = 100
    tol: float = 1e-7        # relative objective improvement
    n_starts: int = 5
    seed: int = 0


@dataclass
class PrecoderSolution:
    admitted: Tuple[int, ...]
    gains: np.ndarray       # (K_adm,) amplitudes, A
    precoder: np.ndarray    # (M, K_adm)
    rates: np.ndarray       # (K_adm,) nats/s/Hz
    objective: float
    trace: List[float]
    solve_time: float


def zf_pseudoinverse(channel: np.ndarray) -> np.ndarray:
    """Moore-Penrose right inverse; raises when the rows are near-dependent."""
    h = np.atleast_2d(np.asarray(channel, dtype=float))
    u, s, vt = np.linalg.svd(h, full_matrices=False)
    if s[0] == 0.0 or s[-1] <= 1e-12 * s[0]:
        weights = np.abs(u[:, -1])
        rows = np.nonzero(weights > 0.3)[0]
        raise RankDeficientChannelError(
            "channel rows are rank deficient (smallest/largest singular value "
            f"= {0.0 if s[0] == 0.0 else s[-1] / s[0]:.2e}); near-dependent user "
            f"rows: {rows.tolist()}", null_weights=weights)
    return (vt.T / s) @ u.T


def rate_of_gain(gain, noise_term: float):
    """Per-user rate for an interference-free amplitude, nats/s/Hz."""
    g = np.asarray(gain, dtype=float)
    r = 0.5 * np.log1p(_RATE_COEFF(noise_term) * g**2)
    return float(r) if np.ndim(r) == 0 else r


def min_gain(r_th: float, noise_term: float) -> float:
    """Smallest amplitude meeting the QoS threshold: rate(min_gain) = r_th."""
    if r_th < 0:
        raise ValueError("r_th must be nonnegative")
    return float(np.sqrt(np.expm1(2.0 * r_th) / _RATE_COEFF(noise_term)))


def admission_control(spec: ProblemSpec) -> np.ndarray:
    """Largest user subset whose QoS corner point respects every AP headroom.

    Greedy: while the corner g = g_min * 1 overloads some AP, drop the
    user with the largest total constraint load and re-derive the
    pseudoinverse. An empty set is a valid outcome.
    """
    g_min = min_gain(spec.r_th, spec.noise_term)
    admitted = list(range(spec.channel.shape[0]))
    while admitted:
        try:
            pinv = zf_pseudoinverse(spec.channel[admitted])
        except RankDeficientChannelError as err:
            drop = int(np.argmax(err.null_weights))
            admitted.pop(drop)
            continue
        amp = np.abs(pinv)  # (M, K_adm)
        if g_min * amp.sum(axis=1).max() <= spec.delta * (1.0 + 1e-12):
            break
        drop = int(np.argmax(amp.sum(axis=0)))
        admitted.pop(drop)
    return np.array(admitted, dtype=int)


def _objective(t: np.ndarray, coeff: float) -> float:
    return float(np.sum(0.5 * np.log1p(coeff * t)))


_MU_MIN = 3e-11
_MU_FACTOR = 30.0


def _newton_barrier(cons: np.ndarray, rhs: np.ndarray, coeff: float,
                    t: np.ndarray, mu: float, tol: float, max_steps: int = 40):
    """Minimize -sum 0.5 ln(1+coeff t) - mu sum ln(rhs - cons t) from a
    strictly feasible t. Returns the iterate and its last Newton decrement."""
    decrement = 0.0
    for _ in range(max_steps):
        slack = rhs - cons @ t
        inv_s = 1.0 / slack
        denom = 1.0 + coeff * t
        grad = -0.5 * coeff / denom + mu * (cons.T @ inv_s)
        hess = np.diag(0.5 * coeff**2 / denom**2) \
            + mu * (cons.T * inv_s**2) @ cons
        try:
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = -grad / np.linalg.norm(grad)
        decrement = -float(grad @ step)
        if decrement <= 2.0 * tol:
            break
        limit = cons @ step
        pos = limit > 0
        alpha = 1.0
        if np.any(pos):
            alpha = min(1.0, 0.99 * float(np.min(slack[pos] / limit[pos])))
        phi0 = -_objective(t, coeff) - mu * float(np.sum(np.log(slack)))
        for _ in range(50):
            cand = t + alpha * step
            s_new = rhs - cons @ cand
            if np.all(s_new > 0):
                phi = -_objective(cand, coeff) - mu * float(np.sum(np.log(s_new)))
                if phi <= phi0 + 0.25 * alpha * float(grad @ step):
                    break
            alpha *= 0.5
        else:
            break
        t = t + alpha * step
    return t, decrement


def _solve_subproblem(a_scaled: np.ndarray, lb_t: np.ndarray, t0: np.ndarray,
                      coeff: float, mu_start: float) -> np.ndarray:
    """One tangent-linearized subproblem: maximize the concave rate sum
    subject to the upper-bounding linear headroom constraints."""
    s_lin = np.sqrt(np.maximum(t0, 1e-24))
    b_rows = a_scaled / (2.0 * s_lin)                    # (M, K)
    d_rhs = 1.0 - (a_scaled * (s_lin / 2.0)).sum(axis=1)  # (M,)
    k = t0.size
    cons = np.vstack([b_rows, -np.eye(k)])
    rhs = np.concatenate([d_rhs, -lb_t])
    slack = rhs - cons @ t0
    if np.min(slack) <= 1e-14:
        return t0  # pinned on the boundary; no interior to improve within
    t = t0.copy()
    mu = mu_start
    while mu > _MU_MIN:
        t, _ = _newton_barrier(cons, rhs, coeff, t, mu, tol=1e-9)
        mu /= _MU_FACTOR
    t, decrement = _newton_barrier(cons, rhs, coeff, t, _MU_MIN, tol=1e-12)
    if decrement > 1e-6:
        raise SubproblemError(
            f"inner solve stalled with Newton decrement {decrement:.2e}")
    return t


def _feasible_starts(a_scaled: np.ndarray, lb_u: float, n_starts: int, seed):
    """Start amplitudes: the headroom constraints are linear in u, so any
    point lb + s*d with s below the per-AP limit is feasible."""
    rng = np.random.default_rng(derive_seed(seed, _STREAM_STARTS))
    k = a_scaled.shape[1]
    base = np.full(k, lb_u)
    slack0 = 1.0 - a_scaled @ base
    starts = []
    for idx in range(max(1, n_starts)):
        if idx == 0:
            direction = np.ones(k)
            frac = 0.5
        else:
            direction = rng.uniform(0.05, 1.0, k)
            frac = rng.uniform(0.2, 0.95)
        along = a_scaled @ direction
        s_max = float(np.min(slack0 / np.maximum(along, 1e-300)))
        starts.append(base + frac * max(s_max, 0.0) * direction)
    return starts


def ccp_solve(spec: ProblemSpec, options: CcpOptions = CcpOptions()) -> PrecoderSolution:
    """Convex-concave ascent for the QoS-constrained ZF gain allocation.

    Returns the best of n_starts feasible initializations; the recorded
    trace is the true-objective sequence of the winning start and is
    monotonically non-decreasing by construction.
    """
    t_begin = time.perf_counter()
    admitted = admission_control(spec)
    m_aps = spec.channel.shape[1]
    if admitted.size == 0:
        return PrecoderSolution(tuple(), np.zeros(0), np.zeros((m_aps, 0)),
                                np.zeros(0), 0.0, [0.0],
                                time.perf_counter() - t_begin)
    pinv = zf_pseudoinverse(spec.channel[admitted])
    amp = np.abs(pinv)
    g_min = min_gain(spec.r_th, spec.noise_term)

    # scale amplitudes so the tightest AP load sits at 1.0
    gamma = spec.delta / float(amp.sum(axis=1).max())
    a_scaled = amp * (gamma / spec.delta)
    coeff = _RATE_COEFF(spec.noise_term) * gamma**2
    lb_u = g_min / gamma
    corner_load = a_scaled @ np.full(admitted.size, lb_u)
    if corner_load.max() > 1.0 + 1e-9:
        raise InfeasibleProblemError(
            "QoS corner point violates the AP headroom after admission")
    lb_t = np.full(admitted.size, lb_u**2)

    best = None
    for u0 in _feasible_starts(a_scaled, lb_u, options.n_starts, options.seed):
        t = u0**2
        trace = [_objective(t, coeff)]
        mu_start = 1e-2
        for _ in range(options.max_iter):
            try:
                t_new = _solve_subproblem(a_scaled, lb_t, t, coeff, mu_start)
            except SubproblemError as err:
                raise SubproblemError(f"{err}; objective trace so far: "
                                      f"{[f'{v:.6g}' for v in trace]}")
            obj_new = _objective(t_new, coeff)
            if obj_new < trace[-1]:
                break  # inner tolerance floor reached; keep the better point
            improvement = obj_new - trace[-1]
            trace.append(obj_new)
            t = t_new
            mu_start = 1e-7  # warm-started subproblems need less homotopy
            if improvement < options.tol * max(1.0, abs(obj_new)):
                break
        if best is None or trace[-1] > best[0]:
            best = (trace[-1], t, trace)

    _, t_best, trace = best
    gains = gamma * np.sqrt(t_best)
    precoder = pinv * gains[None, :]
    rates = rate_of_gain(gains, spec.noise_term)
    return PrecoderSolution(tuple(int(i) for i in admitted), gains, precoder,
                            np.atleast_1d(rates), float(np.sum(rates)),
                            trace, time.perf_counter() - t_begin)


def _grid_oracle(spec: ProblemSpec, admitted: np.ndarray, grid: int,
                 refinements: int, t_begin: float) -> PrecoderSolution:
    pinv = zf_pseudoinverse(spec.channel[admitted])
    amp = np.abs(pinv)
    g_min = min_gain(spec.r_th, spec.noise_term)
    k = admitted.size
    lo = np.full(k, g_min)
    with np.errstate(divide="ignore"):
        hi = np.min(np.where(amp > 0.0, spec.delta / amp, np.inf), axis=0)
    if np.any(hi < lo):
        raise InfeasibleProblemError("empty feasible box for the grid oracle")

    best_g = None
    for _ in range(refinements + 1):
        axes = [np.linspace(lo[i], hi[i], grid) for i in range(k)]
        if k == 1:
            g1 = axes[0]
            load = amp[:, 0][:, None] * g1[None, :]
            mask = np.all(load <= spec.delta + 1e-15, axis=0)
            obj = np.where(mask, rate_of_gain(g1, spec.noise_term), -np.inf)
            idx = int(np.argmax(obj))
            if not np.isfinite(obj[idx]):
                raise InfeasibleProblemError("no feasible grid point")
            best_g = np.array([g1[idx]])
        else:
            g1, g2 = np.meshgrid(axes[0], axes[1], indexing="ij")
            load = (amp[:, 0][:, None, None] * g1[None]
                    + amp[:, 1][:, None, None] * g2[None])
            mask = np.all(load <= spec.delta + 1e-15, axis=0)
            obj = np.where(mask, rate_of_gain(g1, spec.noise_term)
                           + rate_of_gain(g2, spec.noise_term), -np.inf)
            flat = int(np.argmax(obj))
            if not np.isfinite(obj.flat[flat]):
                raise InfeasibleProblemError("no feasible grid point")
            picks = np.unravel_index(flat, obj.shape)
            best_g = np.array([g1[picks], g2[picks]])
        cell = (hi - lo) / (grid - 1)
        lo = np.maximum(np.full(k, g_min), best_g - 2.0 * cell)
        hi = np.minimum(hi, best_g + 2.0 * cell)

    precoder = pinv * best_g[None, :]
    rates = np.atleast_1d(rate_of_gain(best_g, spec.noise_term))
    return PrecoderSolution(tuple(int(i) for i in admitted), best_g, precoder,
                            rates, float(np.sum(rates)), [float(np.sum(rates))],
                            time.perf_counter() - t_begin)


def oracle_solve(spec: ProblemSpec, grid: int = 400, refinements: int = 2,
                 n_starts: int = 50, seed: int = 0) -> PrecoderSolution:
    """Reference solver: exhaustive refined grid for K <= 2 admitted users,
    heavy multi-start CCP beyond that."""
    t_begin = time.perf_counter()
    admitted = admission_control(spec)
    m_aps = spec.channel.shape[1]
    if admitted.size == 0:
        return PrecoderSolution(tuple(), np.zeros(0), np.zeros((m_aps, 0)),
                                np.zeros(0), 0.0, [0.0],
                                time.perf_counter() - t_begin)
    if admitted.size <= 2:
        return _grid_oracle(spec, admitted, grid, refinements, t_begin)
    return ccp_solve(spec, CcpOptions(n_starts=n_starts, seed=seed))


def realized_rates(precoder: np.ndarray, true_channel: np.ndarray,
                   noise_term: float) -> np.ndarray:
    """Per-user rates when a precoder designed elsewhere meets the true
    channel: residual cross-terms count as noise."""
    if precoder.shape[1] == 0:
        return np.zeros(0)
    eff = np.atleast_2d(true_channel) @ precoder  # (K, K)
    diag = np.diag(eff)
    interference = np.sum(eff**2, axis=1) - diag**2
    sinr = diag**2 / (interference + np.pi * np.e * noise_term / 2.0)
    return 0.5 * np.log1p(sinr)


# ---------------------------------------------------------------------------
# structured-text problem/solution files for the `solve` CLI path
# ---------------------------------------------------------------------------

def load_problem(path: str) -> ProblemSpec:
    scalars = {}
    rows = []
    in_matrix = False
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if in_matrix:
                try:
                    rows.append([float(v) for v in line.split(",")])
                except ValueError:
                    raise ValueError(f"{path}: line {lineno}: bad channel row")
                continue
            if line == "channel:":
                in_matrix = True
                continue
            if ":" not in line:
                raise ValueError(f"{path}: line {lineno}: expected 'key: value'")
            key, _, val = line.partition(":")
            scalars[key.strip()] = val.strip()
    missing = {"r_th", "noise_term", "delta"} - set(scalars)
    if missing:
        raise ValueError(f"{path}: missing keys {sorted(missing)}")
    if not rows:
        raise ValueError(f"{path}: missing 'channel:' block")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: ragged channel rows")
    return ProblemSpec(np.array(rows), float(scalars["delta"]),
                       float(scalars["noise_term"]), float(scalars["r_th"]))


def save_solution(solution: PrecoderSolution, stem: str):
    lines = [
        f"admitted: {' '.join(str(i) for i in solution.admitted)}",
        f"objective_nats_per_s_per_hz: {solution.objective!r}",
        f"solve_time_s: {solution.solve_time:.6f}",
        f"gains_a: {' '.join(repr(float(g)) for g in solution.gains)}",
        f"rates_nats_per_s_per_hz: {' '.join(repr(float(r)) for r in solution.rates)}",
        "precoder_rows:",
    ]
    for row in solution.precoder:
        lines.append(",".join(repr(float(v)) for v in row))
    with open(f"{stem}.solution", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(f"{stem}.trace.csv", "w") as fh:
        fh.write("iteration,objective_nats_per_s_per_hz\n")
        for i, obj in enumerate(solution.trace):
            fh.write(f"{i},{obj!r}\n")
