"""Matplotlib figures for the CLI reports (Agg backend, fixed metadata)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no timestamps or version strings, so identical data gives identical files
_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)


def plot_frames(frames, path, title: str = "geodesic frames"):
    """Interior densities of a few frames; boundary masses as a side panel."""
    g = frames[0].rho.geometry
    fig, (ax, bx) = plt.subplots(1, 2, figsize=(9, 3.6), gridspec_kw={"width_ratios": [3, 1]})
    cmap = plt.get_cmap("viridis")
    for k, fr in enumerate(frames):
        col = cmap(k / max(len(frames) - 1, 1))
        if g.kind == "interval":
            ax.plot(g.cell_centers()[:, 0], fr.rho.omega, color=col, label=f"t={fr.t:.2f}")
        else:
            ax.plot(g.cell_centers()[0, :, 1], fr.rho.omega.sum(axis=0) * g.dx, color=col,
                    label=f"t={fr.t:.2f}")
    ax.set_xlabel("x" if g.kind == "interval" else "y (density summed over x)")
    ax.set_ylabel("interior density")
    ax.legend(fontsize=7, frameon=False)
    ts = [fr.t for fr in frames]
    bm = [float(fr.rho.gamma.sum() * g.boundary_length) for fr in frames]
    bx.plot(ts, bm, "o-", color="k")
    bx.set_xlabel("t")
    bx.set_ylabel("boundary mass")
    ax.set_title(title)
    _save(fig, path)


def plot_action_slices(slices, path):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    t = (np.arange(len(slices)) + 0.5) / len(slices)
    ax.plot(t, slices, ".-")
    ax.axhline(np.mean(slices), color="0.5", lw=0.8, ls="--")
    ax.set_xlabel("t")
    ax.set_ylabel("action per time slice")
    _save(fig, path)


def plot_sweep(rows, path):
    k = [r["kappa"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.semilogx(k, [r["primal"] for r in rows], "o-", label="primal")
    ax.semilogx(k, [r["dual"] for r in rows], "s--", label="dual", mfc="none")
    ax.set_xlabel("kappa")
    ax.set_ylabel("squared distance")
    ax.legend(frameon=False)
    _save(fig, path)


def plot_energy(traj, path):
    fig, (ax, bx) = plt.subplots(1, 2, figsize=(8, 3.2))
    ax.plot(traj.times, traj.energies)
    ax.set_xlabel("t")
    ax.set_ylabel("energy")
    bx.semilogy(traj.times, np.maximum(np.asarray(traj.mass_drift), 1e-18))
    bx.set_xlabel("t")
    bx.set_ylabel("relative mass drift")
    _save(fig, path)


def plot_flow_states(states, path):
    g = states[0].geometry
    fig, ax = plt.subplots(figsize=(5, 3.4))
    cmap = plt.get_cmap("plasma")
    for k, st in enumerate(states):
        col = cmap(k / max(len(states) - 1, 1))
        if g.kind == "interval":
            ax.plot(g.cell_centers()[:, 0], st.omega, color=col, label=f"t={st.time:.3g}")
        else:
            om = st.omega.reshape(g.cell_shape)
            ax.plot(g.cell_centers()[0, :, 1], om.mean(axis=0), color=col, label=f"t={st.time:.3g}")
    ax.set_xlabel("x" if g.kind == "interval" else "y")
    ax.set_ylabel("interior density")
    ax.legend(fontsize=7, frameon=False)
    _save(fig, path)
