"""Figure rendering for simulation, sweep, frequency-response and eigenvalue output.

Every report function writes a PNG next to the delimited output of the same
run.  The Agg backend is forced so rendering works headless and the files
are reproducible across runs.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams.update({
    "figure.figsize": (8.0, 4.5),
    "figure.dpi": 130,
    "axes.grid": True,
    "grid.alpha": 0.4,
    "font.size": 9,
    "lines.linewidth": 1.2,
    "savefig.bbox": "tight",
})


def save_tracking_figure(ts, path):
    """d- and q-axis converter current against their references."""
    fig, axes = plt.subplots(2, 1, sharex=True)
    t = ts.time
    axes[0].plot(t, ts.channel("vsc1_i_ld"), label="i_ld")
    axes[0].plot(t, ts.channel("vsc1_i_ld_ref"), "--", label="reference")
    axes[0].set_ylabel("d-axis current (pu)")
    axes[0].legend(loc="best")
    axes[1].plot(t, ts.channel("vsc1_i_lq"), label="i_lq")
    axes[1].plot(t, ts.channel("vsc1_i_lq_ref"), "--", label="reference")
    axes[1].set_ylabel("q-axis current (pu)")
    axes[1].set_xlabel("time (s)")
    axes[1].legend(loc="best")
    fig.savefig(path)
    plt.close(fig)


def save_dc_figure(ts, path):
    """dc-link voltages of both stations and the line current."""
    fig, axes = plt.subplots(2, 1, sharex=True)
    t = ts.time
    axes[0].plot(t, ts.channel("vsc1_v_dc"), label="station 1")
    if ts.has_channel("vsc2_v_dc"):
        axes[0].plot(t, ts.channel("vsc2_v_dc"), label="station 2")
    axes[0].set_ylabel("dc voltage (pu)")
    axes[0].legend(loc="best")
    if ts.has_channel("line_i_dc"):
        axes[1].plot(t, ts.channel("line_i_dc"))
        axes[1].set_ylabel("line current (pu)")
    else:
        axes[1].plot(t, ts.channel("vsc1_i_dc"))
        axes[1].set_ylabel("converter dc current (pu)")
    axes[1].set_xlabel("time (s)")
    fig.savefig(path)
    plt.close(fig)


def save_sweep_figure(runs, path):
    """Overlay of d-axis current responses for each tracking weight.

    ``runs`` is a list of (weight, TimeSeries) pairs.
    """
    fig, ax = plt.subplots()
    for w, ts in runs:
        ax.plot(ts.time, ts.channel("vsc1_i_ld"), label=f"w = {w:g}")
    if runs:
        ax.plot(runs[0][1].time, runs[0][1].channel("vsc1_i_ld_ref"),
                "k--", alpha=0.6, label="reference")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("d-axis current (pu)")
    ax.legend(loc="best")
    fig.savefig(path)
    plt.close(fig)


def save_bode_figure(freqs, response, path):
    """Magnitude/phase panels for the 2x2 current transfer matrix.

    ``response`` has shape (len(freqs), 2, 2).
    """
    labels = (("G_d1", "G_d2"), ("G_q1", "G_q2"))
    fig, axes = plt.subplots(2, 1, sharex=True, figsize=(8.0, 6.0))
    for i in range(2):
        for j in range(2):
            entry = response[:, i, j]
            axes[0].loglog(freqs, np.abs(entry), label=labels[i][j])
            axes[1].semilogx(freqs, np.degrees(np.unwrap(np.angle(entry))),
                             label=labels[i][j])
    axes[0].set_ylabel("magnitude (pu/pu)")
    axes[0].legend(loc="best", ncol=2)
    axes[1].set_ylabel("phase (deg)")
    axes[1].set_xlabel("frequency (rad/s)")
    fig.savefig(path)
    plt.close(fig)


def save_eigenvalue_figure(eigs, path):
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    ax.scatter(np.real(eigs), np.imag(eigs), marker="x", color="tab:red")
    ax.axvline(0.0, color="k", lw=0.8)
    ax.set_xlabel("real part (1/s)")
    ax.set_ylabel("imaginary part (rad/s)")
    fig.savefig(path)
    plt.close(fig)
