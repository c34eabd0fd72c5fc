# Copyright (c) 2024-present, capguard contributors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.


import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from data.roads import sample_centerline  # noqa: E402
from sim.planner import plan_reference  # noqa: E402
from utils.errors import ManeuverInfeasibleError  # noqa: E402

# fixed ids and no timestamp so identical figures give identical bytes
matplotlib.rcParams["svg.hashsalt"] = "capguard"
SVG_METADATA = {"Date": None}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)


def plot_interval_lengths(lengths, path, bins=30):
    """Overlaid histograms of finite interval lengths, one per label (e.g. naive vs equalized)."""
    pooled = np.concatenate([np.asarray(v, dtype=np.float64) for v in lengths.values()])
    edges = np.histogram_bin_edges(pooled, bins=bins)
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, values in lengths.items():
        ax.hist(values, bins=edges, histtype="step", linewidth=1.5, label=label)
    ax.set_xlabel("interval length [m]")
    ax.set_ylabel("count")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_decision(seg, decision, path):
    """Lane-relative reference of every candidate with the upper-bound envelope of the chosen one."""
    s_c, _, _, _, w = sample_centerline(seg, step=1.0)
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(s_c, 0.5 * w, "k-", linewidth=1)
    ax.plot(s_c, -0.5 * w, "k-", linewidth=1)
    ax.plot(s_c, np.zeros_like(s_c), "k:", linewidth=0.5)

    for c in decision.candidates:
        try:
            ref = plan_reference(seg, c.maneuver)
        except ManeuverInfeasibleError:
            continue
        chosen = (not decision.is_mrm) and c.maneuver == decision.chosen
        ax.plot(ref.s, ref.d, linewidth=2 if chosen else 0.8, alpha=1.0 if chosen else 0.5,
                label=f"a={c.maneuver.a_lat_max:g} {c.verdict.value}")
        if chosen and np.isfinite(c.eps_hat):
            ax.fill_between(ref.s, ref.d - c.eps_hat, ref.d + c.eps_hat, alpha=0.2)
            # clearance band around the target lateral offset
            target = ref.d[-1]
            for sign in (-1.0, 1.0):
                ax.axhline(target + sign * decision.clearance, color="r", linestyle="--", linewidth=0.8)
    if decision.candidates and decision.candidates[0].maneuver.direction != 0:
        # adjacent lane edge
        side = decision.candidates[0].maneuver.direction
        ax.plot(s_c, side * 1.5 * w, "k-", linewidth=1)

    ax.set_xlabel("s [m]")
    ax.set_ylabel("d [m]")
    ax.set_title("MRM" if decision.is_mrm else f"chosen a_lat_max = {decision.chosen.a_lat_max:g}")
    ax.legend(fontsize=7, loc="best")
    fig.tight_layout()
    _save(fig, path)


def plot_trace(frame, path):
    """Lateral deviation and steering angles of a recorded tracking trace."""
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    ax0.plot(frame["t"], frame["e_d"])
    ax0.set_ylabel("e_d [m]")
    ax1.plot(frame["t"], np.degrees(frame["delta_f"]), label="front")
    ax1.plot(frame["t"], np.degrees(frame["delta_r"]), label="rear")
    ax1.set_ylabel("steering [deg]")
    ax1.set_xlabel("t [s]")
    ax1.legend()
    fig.tight_layout()
    _save(fig, path)
