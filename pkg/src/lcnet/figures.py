"""Matplotlib renderings of the report tables.

Every figure mirrors a delimited output written next to it; the CSVs stay
the canonical record. PNGs are written without the Software tag so reruns
produce identical bytes.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_PNG_META = {"Software": None}
_GENDER_COLORS = {"female": "tab:red", "male": "tab:blue", "total": "black"}


def _save(fig, path):
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def render_mse_boxplots(values_by_model, path, benchmarks=None, scale=1e-4):
    """Three panels (female, male, total) of per-seed forecasting MSEs.

    ``values_by_model``: model -> {group: [per-run MSE, ...]}. Horizontal
    dashed lines mark benchmark models (e.g. the classic SVD fit).
    """
    groups = ("female", "male", "total")
    models = list(values_by_model)
    fig, axes = plt.subplots(1, 3, figsize=(12, 4), sharey=False)
    for ax, group in zip(axes, groups):
        data = [np.asarray(values_by_model[m][group]) / scale for m in models]
        box = ax.boxplot(data, tick_labels=models, patch_artist=True)
        for patch in box["boxes"]:
            patch.set_facecolor(_GENDER_COLORS[group])
            patch.set_alpha(0.45)
        if benchmarks:
            for name, per_group in benchmarks.items():
                ax.axhline(per_group[group] / scale, linestyle="--",
                           color="gray", linewidth=1)
                ax.annotate(name, xy=(0.02, per_group[group] / scale),
                            xycoords=("axes fraction", "data"), fontsize=7,
                            va="bottom", color="gray")
        ax.set_title(group)
        ax.set_ylabel(f"MSE (x{scale:g})")
        ax.tick_params(axis="x", rotation=45, labelsize=7)
    fig.tight_layout()
    _save(fig, path)


def render_per_age_mse(per_age, path, scale=1e-4):
    """Per-age out-of-sample MSE curves, log-scaled y axis."""
    ages = sorted(per_age)
    models = sorted(per_age[ages[0]])
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for model in models:
        ax.plot(ages, [per_age[a][model] / scale for a in ages], label=model,
                linewidth=1.2)
    ax.set_yscale("log")
    ax.set_xlabel("age")
    ax.set_ylabel(f"MSE (x{scale:g}, log scale)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)


def render_parameter_envelopes(country, by_gender, ages, years, path):
    """Across-seed min/max bands of the extracted parameters for one country.

    ``by_gender``: gender -> {"a": (low, high), "b": ..., "k": ...}.
    """
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    panels = (("a", "age profile", ages), ("b", "age sensitivity", ages),
              ("k", "period index", years))
    for ax, (name, title, grid) in zip(axes, panels):
        for gender, env in by_gender.items():
            low, high = env[name]
            color = _GENDER_COLORS[gender]
            ax.fill_between(grid, low, high, color=color, alpha=0.3)
            ax.plot(grid, low, color=color, linewidth=0.8)
            ax.plot(grid, high, color=color, linewidth=0.8, label=gender)
        ax.set_title(f"{country}: {title}")
        ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)


def render_loss_curve(loss_curve, path, label="training loss"):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(np.arange(len(loss_curve)), loss_curve, linewidth=1.0)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel(label)
    fig.tight_layout()
    _save(fig, path)


def render_parameter_curves(country, by_gender, ages, years, path):
    """Extracted parameter curves for one country (single run)."""
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    panels = (("a", "age profile", ages), ("b", "age sensitivity", ages),
              ("k", "period index", years))
    for ax, (name, title, grid) in zip(axes, panels):
        for gender, params in by_gender.items():
            ax.plot(grid, getattr(params, name),
                    color=_GENDER_COLORS[gender], linewidth=1.0, label=gender)
        ax.set_title(f"{country}: {title}")
        ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)
