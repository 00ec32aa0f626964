"""Proactive-optimization harness: collect SNR windows, predict posterior
channel matrices, solve the precoder problem ahead of time, and score the
applied solution against the channel that actually materializes.

Every Monte-Carlo slot is an independent episode with its own derived
seed: fresh trajectories for the K users, a feature window ending at
slot t, and a target slot t + L. Four cases share each episode so the
comparison is paired:

    genie        solve on H(t+L), apply at t+L          (no aging, upper bound)
    po_lstm      solve on predicted H(t+L), apply at t+L
    persistence  solve on the channel of the frozen pose(t), apply at t+L
    aged         solve on H(t), apply at t+L             (stale by L slots)

Realized per-user rates always score the applied precoder against the
true H(t+L), counting residual cross-terms as noise.
"""

import os
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional

import numpy as np

from . import __version__
from .channel import RoomLayout, downlink_channel, uplink_channel, uplink_snr
from .dataset import derive_seed, snr_to_features
from .geometry import DeviceGeometry, Pose
from .lstm import LstmModel, persistence_predict, predict_pose
from .mobility import MobilityConfig, Trajectory, frozen_trajectory, sample_trajectory
from .precoder import CcpOptions, ProblemSpec, ccp_solve, realized_rates

CASES = ("genie", "po_lstm", "persistence", "aged")

_STREAM_EPISODE = 41


@dataclass
class SnrWindow:
    """The N most recent uplink SNR vectors (linear scale) for one user."""

    snr: np.ndarray        # (n_prior, M)
    slots: np.ndarray      # consecutive slot indices
    n_users: int           # K used for the uplink noise split

    def __post_init__(self):
        self.slots = np.asarray(self.slots, dtype=int)
        if np.any(np.diff(self.slots) != 1):
            raise ValueError("window slot indices must be consecutive")


def collect_window(trajectory: Trajectory, t: int, layout: RoomLayout,
                   geom: DeviceGeometry, k_users: int, n_prior: int) -> SnrWindow:
    """Uplink SNR vectors for slots t-n_prior+1 .. t."""
    if t < n_prior - 1:
        raise ValueError(f"slot {t} has fewer than {n_prior} slots of history")
    gains = np.array([uplink_channel(trajectory[j], layout, geom)
                      for j in range(t - n_prior + 1, t + 1)])
    snr = uplink_snr(gains, layout.dc_bias, k_users, layout.noise_psd,
                     layout.bandwidth)
    return SnrWindow(snr, np.arange(t - n_prior + 1, t + 1), k_users)


def window_features(window: SnrWindow, meta) -> np.ndarray:
    """Stored-feature view of a window, rescaled to the training user count.

    The uplink noise is split over the active users, so SNR scales
    linearly with K; dividing it out reproduces the feature values the
    predictor was fitted on.
    """
    snr = window.snr * (meta.uplink_users / window.n_users)
    return snr_to_features(snr, meta)


def lstm_predictor(model: LstmModel, layout: RoomLayout) -> Callable:
    """Predictor closure: (window, step, trajectory) -> Pose via the network."""
    def predict(window: SnrWindow, step: int, trajectory: Trajectory) -> Pose:
        return predict_pose(model, window_features(window, model.meta), step, layout)
    return predict


def persistence_predictor() -> Callable:
    """Predictor closure that freezes the pose at the window's last slot."""
    def predict(window: SnrWindow, step: int, trajectory: Trajectory) -> Pose:
        return persistence_predict(trajectory[int(window.slots[-1])], step)
    return predict


def oracle_predictor() -> Callable:
    """Perfect-knowledge stub: returns the true posterior pose."""
    def predict(window: SnrWindow, step: int, trajectory: Trajectory) -> Pose:
        return trajectory[int(window.slots[-1]) + step]
    return predict


def predict_channel_matrix(predictor: Callable, windows: List[SnrWindow],
                           trajectories: List[Trajectory], step: int,
                           layout: RoomLayout, geom: DeviceGeometry):
    """Stack per-user predicted poses into the posterior channel matrix."""
    rows, poses = [], []
    for window, traj in zip(windows, trajectories):
        pose = predictor(window, step, traj)
        poses.append(pose)
        rows.append(downlink_channel(pose, layout, geom))
    return np.array(rows), poses


@dataclass
class TrialRecord:
    slot: int
    seed: int
    sum_rate: Dict[str, float] = field(default_factory=dict)       # nats/s/Hz
    solve_time: Dict[str, float] = field(default_factory=dict)     # s
    pose_error: Dict[str, float] = field(default_factory=dict)     # m
    admitted: Dict[str, int] = field(default_factory=dict)


@dataclass
class EpisodeContext:
    trajectories: List[Trajectory]
    windows: List[SnrWindow]
    t: int
    step: int
    h_now: np.ndarray      # H(t)
    h_target: np.ndarray   # H(t+L)
    true_positions: np.ndarray  # (K, 3) at t+L
    layout: RoomLayout
    geom: DeviceGeometry
    r_th: float
    options: CcpOptions


def _score(solution, ctx: EpisodeContext):
    admitted = list(solution.admitted)
    rates = realized_rates(solution.precoder, ctx.h_target[admitted],
                           ctx.layout.noise_term)
    return float(np.sum(rates))


def run_case(case: str, ctx: EpisodeContext, predictor: Callable = None):
    """Solve and score one comparison case on a prepared episode."""
    if case == "genie":
        h_solve, poses = ctx.h_target, None
    elif case == "aged":
        h_solve, poses = ctx.h_now, [traj[ctx.t] for traj in ctx.trajectories]
    elif case in ("po_lstm", "persistence"):
        h_solve, poses = predict_channel_matrix(
            predictor, ctx.windows, ctx.trajectories, ctx.step, ctx.layout,
            ctx.geom)
    else:
        raise ValueError(f"unknown case '{case}'")
    spec = ProblemSpec(h_solve, ctx.layout.amplitude_headroom,
                       ctx.layout.noise_term, ctx.r_th)
    t0 = time.perf_counter()
    solution = ccp_solve(spec, ctx.options)
    solve_time = time.perf_counter() - t0
    if poses is None:
        pose_error = 0.0
    else:
        pred = np.array([p.position for p in poses])
        pose_error = float(np.mean(np.linalg.norm(pred - ctx.true_positions, axis=1)))
    return {
        "sum_rate": _score(solution, ctx),
        "solve_time": solve_time,
        "pose_error": pose_error,
        "admitted": len(solution.admitted),
    }


def build_episode(slot: int, scenario, layout: RoomLayout, geom: DeviceGeometry,
                  mobility: MobilityConfig, n_prior: int, l_max: int,
                  solver: CcpOptions, r_th: float = None,
                  k_users: int = None) -> EpisodeContext:
    """Independent episode: fresh per-user trajectories and warmed windows."""
    k = scenario.k_users if k_users is None else k_users
    r = scenario.r_th if r_th is None else r_th
    step = scenario.posterior_step
    if step > l_max:
        raise ValueError("posterior_step exceeds the model's l_max")
    n_steps = n_prior + l_max
    make = frozen_trajectory if scenario.freeze_mobility else sample_trajectory
    trajectories = [
        make(derive_seed(scenario.seed, _STREAM_EPISODE, slot, u), n_steps,
             mobility, layout)
        for u in range(k)
    ]
    t = n_prior - 1
    windows = [collect_window(traj, t, layout, geom, k, n_prior)
               for traj in trajectories]
    h_now = np.array([downlink_channel(traj[t], layout, geom)
                      for traj in trajectories])
    h_target = np.array([downlink_channel(traj[t + step], layout, geom)
                         for traj in trajectories])
    true_positions = np.array([traj[t + step].position for traj in trajectories])
    options = CcpOptions(max_iter=solver.max_iter, tol=solver.tol,
                         n_starts=solver.n_starts,
                         seed=int(derive_seed(scenario.seed, _STREAM_EPISODE,
                                              slot).generate_state(1)[0]))
    return EpisodeContext(trajectories, windows, t, step, h_now, h_target,
                          true_positions, layout, geom, r, options)


def run_slot(slot: int, scenario, layout, geom, mobility, model: Optional[LstmModel],
             n_prior: int, l_max: int, solver: CcpOptions, r_th: float = None,
             k_users: int = None, pose_oracle: bool = False) -> TrialRecord:
    """All four cases on one episode; identical solver seeds keep the
    comparison paired."""
    ctx = build_episode(slot, scenario, layout, geom, mobility, n_prior, l_max,
                        solver, r_th, k_users)
    po = oracle_predictor() if pose_oracle else lstm_predictor(model, layout)
    record = TrialRecord(slot=slot, seed=scenario.seed)
    for case, predictor in (("genie", None), ("po_lstm", po),
                            ("persistence", persistence_predictor()),
                            ("aged", None)):
        result = run_case(case, ctx, predictor)
        record.sum_rate[case] = result["sum_rate"]
        record.solve_time[case] = result["solve_time"]
        record.pose_error[case] = result["pose_error"]
        record.admitted[case] = result["admitted"]
    return record


# ---------------------------------------------------------------------------
# aggregation and CSV output
# ---------------------------------------------------------------------------

def mean_ci(values) -> tuple:
    """Mean and 95% normal-approximation half-width."""
    arr = np.asarray(values, dtype=float)
    if arr.size < 2:
        return float(arr.mean()) if arr.size else float("nan"), float("nan")
    half = 1.96 * arr.std(ddof=1) / np.sqrt(arr.size)
    return float(arr.mean()), float(half)


def _fmt(x) -> str:
    return f"{x:.17g}"


def write_csv(path: str, header: List[str], rows: List[List]):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def write_run_manifest(out_dir: str, command: str, seed: int,
                       config_fp: str, deterministic: bool):
    lines = [
        f"command: {command}",
        f"seed: {seed}",
        f"config_fingerprint: {config_fp}",
        f"package_version: {__version__}",
        f"deterministic: {deterministic}",
    ]
    with open(os.path.join(out_dir, "run_manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _slot_rows(records: List[TrialRecord], deterministic: bool):
    header = ["slot", "seed"]
    header += [f"sum_rate_{c}_nats_per_s_per_hz" for c in CASES]
    header += [f"solve_time_{c}_s" for c in CASES]
    header += [f"pose_error_{c}_m" for c in CASES]
    header += [f"admitted_{c}" for c in CASES]
    rows = []
    for rec in records:
        row = [rec.slot, rec.seed]
        row += [rec.sum_rate[c] for c in CASES]
        row += [0.0 if deterministic else rec.solve_time[c] for c in CASES]
        row += [rec.pose_error[c] for c in CASES]
        row += [rec.admitted[c] for c in CASES]
        rows.append(row)
    return header, rows


def experiment_aging(config, model: LstmModel, out_dir: str,
                     deterministic: bool = False) -> dict:
    """Paired sum-rate comparison of the four cases at fixed K and L."""
    scenario = config.scenario
    meta = model.meta
    records = [
        run_slot(slot, scenario, config.layout, config.geom, config.mobility,
                 model, meta.n_prior, meta.l_max, config.solver)
        for slot in range(scenario.n_slots)
    ]
    header, rows = _slot_rows(records, deterministic)
    write_csv(os.path.join(out_dir, "aging_slots.csv"), header, rows)

    summary_rows = []
    stats = {}
    for case in CASES:
        mean, half = mean_ci([r.sum_rate[case] for r in records])
        t_mean = float(np.mean([r.solve_time[case] for r in records]))
        stats[case] = {"mean": mean, "ci95": half,
                       "solve_time": 0.0 if deterministic else t_mean,
                       "pose_error": float(np.mean([r.pose_error[case]
                                                    for r in records])),
                       "admitted": float(np.mean([r.admitted[case]
                                                  for r in records]))}
        summary_rows.append([case, mean, half, stats[case]["solve_time"],
                             stats[case]["pose_error"], stats[case]["admitted"]])
    genie = stats["genie"]["mean"]
    stats["po_gap_rel"] = (genie - stats["po_lstm"]["mean"]) / genie if genie else 0.0
    stats["aged_gap_rel"] = (genie - stats["aged"]["mean"]) / genie if genie else 0.0
    write_csv(os.path.join(out_dir, "aging_summary.csv"),
              ["case", "mean_sum_rate_nats_per_s_per_hz", "ci95_half_width",
               "mean_solve_time_s", "mean_pose_error_m", "mean_admitted"],
              summary_rows)
    return stats


def experiment_sumrate_vs_k(config, model: LstmModel, out_dir: str,
                            deterministic: bool = False) -> dict:
    """Per-K means for every case, solved with both the regular and the
    multi-start reference budgets."""
    scenario = config.scenario
    meta = model.meta
    results = {}
    rows = []
    solvers = {
        "ccp": config.solver,
        "ref": CcpOptions(max_iter=config.solver.max_iter, tol=config.solver.tol,
                          n_starts=scenario.reference_starts,
                          seed=config.solver.seed),
    }
    for k in scenario.k_sweep:
        if k > config.layout.n_aps:
            raise ValueError(f"K={k} exceeds the AP count")
        for solver_name, options in solvers.items():
            records = [
                run_slot(slot, scenario, config.layout, config.geom,
                         config.mobility, model, meta.n_prior, meta.l_max,
                         options, k_users=k)
                for slot in range(scenario.sweep_slots)
            ]
            for case in CASES:
                mean, half = mean_ci([r.sum_rate[case] for r in records])
                results[(k, solver_name, case)] = (mean, half)
        row = [k]
        for case in CASES:
            for solver_name in solvers:
                mean, half = results[(k, solver_name, case)]
                row += [mean, half]
        rows.append(row)
    header = ["k_users"]
    for case in CASES:
        for solver_name in solvers:
            header += [f"mean_sum_rate_{case}_{solver_name}_nats_per_s_per_hz",
                       f"ci95_{case}_{solver_name}"]
    write_csv(os.path.join(out_dir, "sumrate_vs_k.csv"), header, rows)
    return results


def experiment_sumrate_vs_rth(config, model: LstmModel, out_dir: str,
                              deterministic: bool = False) -> dict:
    """QoS sweep at fixed K: admitted sum-rate and admitted-user count."""
    scenario = config.scenario
    meta = model.meta
    results = {}
    rows = []
    for r_th in scenario.rth_sweep:
        records = [
            run_slot(slot, scenario, config.layout, config.geom, config.mobility,
                     model, meta.n_prior, meta.l_max, config.solver, r_th=r_th)
            for slot in range(scenario.sweep_slots)
        ]
        row = [r_th]
        for case in CASES:
            mean, half = mean_ci([r.sum_rate[case] for r in records])
            adm = float(np.mean([r.admitted[case] for r in records]))
            results[(r_th, case)] = (mean, half, adm)
            row += [mean, half, adm]
        rows.append(row)
    header = ["r_th_nats_per_s_per_hz"]
    for case in CASES:
        header += [f"mean_sum_rate_{case}_nats_per_s_per_hz",
                   f"ci95_{case}", f"mean_admitted_{case}"]
    write_csv(os.path.join(out_dir, "sumrate_vs_rth.csv"), header, rows)
    return results


def experiment_timing(config, out_dir: str, deterministic: bool = False) -> dict:
    """Mean genie-case solve time versus K for the regular CCP budget and
    the multi-start reference budget on identical instances."""
    scenario = config.scenario
    n_prior, l_max = config.dataset.n_prior, config.dataset.l_max
    ref_options = CcpOptions(max_iter=config.solver.max_iter,
                             tol=config.solver.tol,
                             n_starts=scenario.reference_starts,
                             seed=config.solver.seed)
    results = {}
    rows = []
    for k in scenario.k_sweep:
        times = {"ccp": [], "ref": []}
        for slot in range(scenario.timing_slots):
            ctx = build_episode(slot, scenario, config.layout, config.geom,
                                config.mobility, n_prior, l_max,
                                config.solver, k_users=k)
            spec = ProblemSpec(ctx.h_target, config.layout.amplitude_headroom,
                               config.layout.noise_term, ctx.r_th)
            t0 = time.perf_counter()
            ccp_solve(spec, ctx.options)
            times["ccp"].append(time.perf_counter() - t0)
            ref = CcpOptions(max_iter=ref_options.max_iter, tol=ref_options.tol,
                             n_starts=ref_options.n_starts, seed=ctx.options.seed)
            t0 = time.perf_counter()
            ccp_solve(spec, ref)
            times["ref"].append(time.perf_counter() - t0)
        mean_ccp = float(np.mean(times["ccp"]))
        mean_ref = float(np.mean(times["ref"]))
        results[k] = {"ccp": mean_ccp, "ref": mean_ref,
                      "n_instances": scenario.timing_slots}
        if deterministic:
            mean_ccp = mean_ref = 0.0
        rows.append([k, mean_ccp, mean_ref, scenario.timing_slots])
    write_csv(os.path.join(out_dir, "timing_vs_k.csv"),
              ["k_users", "mean_solve_time_ccp_s", "mean_solve_time_ref_s",
               "n_instances"], rows)
    return results


def experiment_static_collapse(config, out_dir: str,
                               deterministic: bool = False) -> dict:
    """Frozen-mobility control: with a perfect pose feed all four cases see
    the same channel, so their realized sum-rates must coincide."""
    scenario = replace(config.scenario, freeze_mobility=True)
    n_prior = config.dataset.n_prior
    l_max = config.dataset.l_max
    records = []
    for slot in range(scenario.n_slots):
        rec = run_slot(slot, scenario, config.layout, config.geom,
                       config.mobility, None, n_prior, l_max, config.solver,
                       pose_oracle=True)
        records.append(rec)
    header, rows = _slot_rows(records, deterministic)
    write_csv(os.path.join(out_dir, "static_collapse_slots.csv"), header, rows)
    spreads = []
    for rec in records:
        vals = np.array([rec.sum_rate[c] for c in CASES])
        denom = max(abs(vals.mean()), 1e-30)
        spreads.append(float((vals.max() - vals.min()) / denom))
    return {"max_relative_spread": max(spreads), "n_slots": len(records)}
