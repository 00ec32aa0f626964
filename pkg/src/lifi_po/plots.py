"""PNG renderings of the experiment CSVs; each figure is produced only
when its source file exists."""

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

CASE_STYLES = {
    "genie": ("tab:green", "o"),
    "po_lstm": ("tab:blue", "s"),
    "persistence": ("tab:orange", "^"),
    "aged": ("tab:red", "v"),
}


def _read_csv(path):
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    cols = {name: [row[i] for row in rows] for i, name in enumerate(header)}
    return cols


def _save(fig, out_dir, name, produced):
    path = os.path.join(out_dir, name)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    produced.append(path)


def render_all(in_dir: str, out_dir: str):
    produced = []

    path = os.path.join(in_dir, "loss_history.csv")
    if os.path.exists(path):
        cols = _read_csv(path)
        fig, ax = plt.subplots(figsize=(7, 4.5))
        ax.semilogy(cols["epoch"], cols["train_mse"], label="training")
        ax.semilogy(cols["epoch"], cols["validation_mse"], label="validation")
        ax.set_xlabel("epoch")
        ax.set_ylabel("MSE")
        ax.legend()
        ax.grid(alpha=0.3)
        _save(fig, out_dir, "loss_history.png", produced)

    path = os.path.join(in_dir, "eval_cdf.csv")
    if os.path.exists(path):
        cols = _read_csv(path)
        fig, ax = plt.subplots(figsize=(7, 4.5))
        steps = sorted(set(int(s) for s in cols["posterior_step"]))
        for step in steps:
            errs = sorted(e for s, e in zip(cols["posterior_step"],
                                            cols["position_error_m"])
                          if int(s) == step)
            y = [i / len(errs) for i in range(1, len(errs) + 1)]
            ax.plot(errs, y, label=f"L={step}")
        ax.set_xlabel("position error (m)")
        ax.set_ylabel("empirical CDF")
        ax.legend()
        ax.grid(alpha=0.3)
        _save(fig, out_dir, "position_error_cdf.png", produced)

    path = os.path.join(in_dir, "sumrate_vs_k.csv")
    if os.path.exists(path):
        cols = _read_csv(path)
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for case, (color, marker) in CASE_STYLES.items():
            for solver, style in (("ccp", "-"), ("ref", "--")):
                key = f"mean_sum_rate_{case}_{solver}_nats_per_s_per_hz"
                if key in cols:
                    ax.plot(cols["k_users"], cols[key], style, color=color,
                            marker=marker, label=f"{case} ({solver})")
        ax.set_xlabel("number of users K")
        ax.set_ylabel("mean sum-rate (nats/s/Hz)")
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
        _save(fig, out_dir, "sumrate_vs_k.png", produced)

    path = os.path.join(in_dir, "sumrate_vs_rth.csv")
    if os.path.exists(path):
        cols = _read_csv(path)
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for case, (color, marker) in CASE_STYLES.items():
            key = f"mean_sum_rate_{case}_nats_per_s_per_hz"
            if key in cols:
                ax.plot(cols["r_th_nats_per_s_per_hz"], cols[key], color=color,
                        marker=marker, label=case)
        ax.set_xlabel("QoS threshold (nats/s/Hz)")
        ax.set_ylabel("mean admitted sum-rate (nats/s/Hz)")
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
        _save(fig, out_dir, "sumrate_vs_rth.png", produced)

    path = os.path.join(in_dir, "timing_vs_k.csv")
    if os.path.exists(path):
        cols = _read_csv(path)
        fig, ax = plt.subplots(figsize=(7, 4.5))
        ax.semilogy(cols["k_users"], cols["mean_solve_time_ccp_s"], "o-",
                    label="ascent solver")
        ax.semilogy(cols["k_users"], cols["mean_solve_time_ref_s"], "s--",
                    label="multi-start reference")
        ax.set_xlabel("number of users K")
        ax.set_ylabel("mean solve time (s)")
        ax.legend()
        ax.grid(alpha=0.3)
        _save(fig, out_dir, "timing_vs_k.png", produced)

    return produced
