"""Policy rollouts, service/feasibility metrics, CSV export, SVG figures.

Every evaluated step records both the realized served count and the
feasibility bound, so the reports separate "physics said no" from "the
policy missed". All aggregation is over pooled sums or per-episode
statistics and is order-independent.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .codecs import Codec, encode
from .cql import PolicyBundle, act
from .env import RelayEnv
from .errors import DimensionError, DomainError, FormatError
from .svgplot import PALETTE, SvgCanvas

TRACE_HEADER = "t,n_served,n_star,reward,x,y,z"
COMPARISON_HEADER = (
    "method,avg_served,peak_served,normalized,feas_full,feas_partial,feas_none,ttf_median,"
    "avg_served_std,peak_served_std,normalized_std,feas_full_std,feas_partial_std,"
    "feas_none_std,ttf_median_std"
)
METHOD_METRICS_HEADER = (
    "seed_index,avg_served,peak_served,normalized,feas_full,feas_partial,feas_none,ttf_median"
)
CDF_HEADER = "method,t,fraction"


@dataclass(frozen=True)
class EpisodeTrace:
    episode_seed: int
    policy_id: str
    n_served: np.ndarray  # (T,) int
    n_star: np.ndarray    # (T,) int
    reward: np.ndarray    # (T,) float
    pos: np.ndarray       # (T, 3)

    def __len__(self) -> int:
        return len(self.n_served)


@dataclass(frozen=True)
class MetricsReport:
    avg_served: float
    peak_served: float
    normalized_discounted: float
    feas_full: float
    feas_partial: float
    feas_none: float
    gap_histogram: tuple[int, ...]   # counts of n_star - n_served on feasible steps
    time_to_feasible: tuple[int, ...]  # per episode; episode length if never reached

    @property
    def ttf_median(self) -> float:
        return float(np.median(self.time_to_feasible))


def run_episode(
    env: RelayEnv,
    bundle: PolicyBundle,
    codec: Codec | None = None,
    episode_seed: int = 0,
) -> EpisodeTrace:
    """Greedy rollout of a frozen policy; observations go through the codec if given."""
    expected = codec.d_z if codec is not None else env.d_obs
    if bundle.input_dim != expected:
        raise DimensionError(
            f"policy expects input dim {bundle.input_dim}, pipeline provides {expected}"
        )
    if codec is not None and codec.d_o != env.d_obs:
        raise DimensionError(f"codec d_o {codec.d_o} != environment observation dim {env.d_obs}")

    t_len = env.cfg.episode_len
    n_served = np.zeros(t_len, dtype=np.int64)
    n_star = np.zeros(t_len, dtype=np.int64)
    reward = np.zeros(t_len, dtype=np.float64)
    pos = np.zeros((t_len, 3), dtype=np.float64)
    world, obs = env.reset(episode_seed=episode_seed)
    for t in range(t_len):
        x = encode(codec, obs).astype(np.float32) if codec is not None else obs
        action = act(bundle, x)
        result = env.step(world, action)
        n_served[t] = result.info["n_served"]
        n_star[t] = result.info["n_star"]
        reward[t] = result.reward
        pos[t] = result.info["uav_pos"]
        obs = result.next_obs
    return EpisodeTrace(
        episode_seed=episode_seed,
        policy_id=bundle.codec_id,
        n_served=n_served,
        n_star=n_star,
        reward=reward,
        pos=pos,
    )


def metrics(traces: list[EpisodeTrace], n_users: int, gamma: float = 0.99) -> MetricsReport:
    """Aggregate a set of equal-length traces into one report."""
    if not traces:
        raise DomainError("metrics() needs at least one trace")
    t_len = len(traces[0])
    if any(len(tr) != t_len for tr in traces):
        raise DomainError("all traces must have equal length")

    discount = gamma ** np.arange(t_len)
    avg, peak, norm, ttfs = [], [], [], []
    gap_hist = np.zeros(n_users + 1, dtype=np.int64)
    full = partial = none = 0
    for tr in traces:
        avg.append(tr.n_served.mean())
        peak.append(tr.n_served.max())
        feasible = tr.n_star > 0
        denom = float(discount[feasible].sum())
        norm.append(float((discount * tr.reward).sum() / denom) if denom > 0 else 0.0)
        full += int((tr.n_star == n_users).sum())
        none += int((~feasible).sum())
        partial += int((feasible & (tr.n_star < n_users)).sum())
        gaps = (tr.n_star - tr.n_served)[feasible]
        gap_hist += np.bincount(gaps, minlength=n_users + 1)[: n_users + 1]
        reached = feasible & (tr.n_served >= tr.n_star)
        ttfs.append(int(np.argmax(reached)) if reached.any() else t_len)

    steps = t_len * len(traces)
    return MetricsReport(
        avg_served=float(np.mean(avg)),
        peak_served=float(np.mean(peak)),
        normalized_discounted=float(np.mean(norm)),
        feas_full=full / steps,
        feas_partial=partial / steps,
        feas_none=none / steps,
        gap_histogram=tuple(int(c) for c in gap_hist),
        time_to_feasible=tuple(ttfs),
    )


def write_trace_csv(path, trace: EpisodeTrace) -> None:
    with open(path, "w", newline="") as f:
        f.write(TRACE_HEADER + "\n")
        for t in range(len(trace)):
            f.write(
                f"{t},{trace.n_served[t]},{trace.n_star[t]},{trace.reward[t]:.6f},"
                f"{trace.pos[t, 0]:.3f},{trace.pos[t, 1]:.3f},{trace.pos[t, 2]:.3f}\n"
            )


def _report_row(label: str, rep: MetricsReport) -> str:
    return (
        f"{label},{rep.avg_served:.6f},{rep.peak_served:.6f},{rep.normalized_discounted:.6f},"
        f"{rep.feas_full:.6f},{rep.feas_partial:.6f},{rep.feas_none:.6f},{rep.ttf_median:.6f}"
    )


def evaluate_suite(
    env: RelayEnv,
    labeled_bundles: dict[str, list[tuple[PolicyBundle, Codec | None]]],
    episodes: int,
    out_dir,
    gamma: float = 0.99,
    eval_seed: int = 0,
) -> dict[str, dict]:
    """Evaluate per-method bundle lists (one entry per training seed).

    All methods see the same episode seeds, so comparisons are paired.
    Writes per-method metric CSVs, the combined comparison CSV
    (means with trailing std columns), and pooled time-to-feasible CDF
    points. Returns {method: {"normalized": ..., "ttf_median": ...}}.
    """
    os.makedirs(out_dir, exist_ok=True)
    t_len = env.cfg.episode_len
    summary: dict[str, dict] = {}
    comparison_rows = []
    cdf_rows = []
    for label, entries in labeled_bundles.items():
        per_seed: list[MetricsReport] = []
        pooled_ttf: list[int] = []
        for k, (bundle, codec) in enumerate(entries):
            traces = [
                run_episode(env, bundle, codec, episode_seed=eval_seed + e)
                for e in range(episodes)
            ]
            rep = metrics(traces, env.cfg.num_users, gamma)
            per_seed.append(rep)
            pooled_ttf.extend(rep.time_to_feasible)
        with open(os.path.join(out_dir, f"metrics_{label}.csv"), "w", newline="") as f:
            f.write(METHOD_METRICS_HEADER + "\n")
            for k, rep in enumerate(per_seed):
                f.write(_report_row(str(k), rep) + "\n")

        def col(get):
            vals = np.array([get(r) for r in per_seed], dtype=np.float64)
            return float(vals.mean()), float(vals.std())

        means_stds = [
            col(lambda r: r.avg_served),
            col(lambda r: r.peak_served),
            col(lambda r: r.normalized_discounted),
            col(lambda r: r.feas_full),
            col(lambda r: r.feas_partial),
            col(lambda r: r.feas_none),
            col(lambda r: r.ttf_median),
        ]
        row = label
        for mean, _ in means_stds:
            row += f",{mean:.6f}"
        for _, std in means_stds:
            row += f",{std:.6f}"
        comparison_rows.append(row)
        summary[label] = {
            "normalized": means_stds[2][0],
            "ttf_median": means_stds[6][0],
            "avg_served": means_stds[0][0],
        }

        ttf_sorted = np.sort(pooled_ttf)
        total = len(ttf_sorted)
        for t in np.unique(ttf_sorted):
            frac = float((ttf_sorted <= t).sum()) / total
            cdf_rows.append(f"{label},{int(t)},{frac:.6f}")
        if len(ttf_sorted) and ttf_sorted[-1] < t_len:
            cdf_rows.append(f"{label},{t_len},1.000000")

    with open(os.path.join(out_dir, "comparison.csv"), "w", newline="") as f:
        f.write(COMPARISON_HEADER + "\n")
        for row in comparison_rows:
            f.write(row + "\n")
    with open(os.path.join(out_dir, "ttf_cdf.csv"), "w", newline="") as f:
        f.write(CDF_HEADER + "\n")
        for row in cdf_rows:
            f.write(row + "\n")
    return summary


# -- figures -------------------------------------------------------------------


def _read_csv(path, expected_fields: int) -> list[list[str]]:
    if not os.path.exists(path):
        raise DomainError(f"missing metrics file: {path}")
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < expected_fields:
                raise FormatError(
                    f"{path}: line {ln}: expected at least {expected_fields} fields, got {len(parts)}"
                )
            rows.append(parts)
    if len(rows) < 2:
        raise FormatError(f"{path}: line 1: no data rows")
    return rows


def _parse_float(path, ln: int, s: str) -> float:
    try:
        return float(s)
    except ValueError:
        raise FormatError(f"{path}: line {ln}: not a number: {s!r}") from None


def plot(metrics_dir, out_dir) -> list[str]:
    """Render the comparison CSVs into three SVG figures.

    Fails before writing anything if inputs are missing or malformed, so
    the output directory never holds partial figure sets.
    """
    comparison = os.path.join(metrics_dir, "comparison.csv")
    cdf_path = os.path.join(metrics_dir, "ttf_cdf.csv")
    comp_rows = _read_csv(comparison, 8)
    cdf_rows = _read_csv(cdf_path, 3)

    methods = [r[0] for r in comp_rows[1:]]
    data = {
        r[0]: [_parse_float(comparison, i + 2, v) for v in r[1:8]]
        for i, r in enumerate(comp_rows[1:])
    }
    curves: dict[str, list[tuple[float, float]]] = {}
    for i, r in enumerate(cdf_rows[1:]):
        curves.setdefault(r[0], []).append(
            (_parse_float(cdf_path, i + 2, r[1]), _parse_float(cdf_path, i + 2, r[2]))
        )

    os.makedirs(out_dir, exist_ok=True)
    outputs = []
    outputs.append(_plot_performance_bars(methods, data, os.path.join(out_dir, "performance.svg")))
    outputs.append(_plot_feasibility_stack(methods, data, os.path.join(out_dir, "feasibility.svg")))
    outputs.append(_plot_ttf_cdf(curves, os.path.join(out_dir, "ttf_cdf.svg")))
    return outputs


def _plot_performance_bars(methods, data, path) -> str:
    metric_names = ["avg served", "peak served", "normalized"]
    canvas = SvgCanvas(780, 320)
    canvas.text(390, 20, "Service and normalized performance by representation", size=14)
    n_m = len(methods)
    group_w = 240
    for g, name in enumerate(metric_names):
        x0 = 30 + g * (group_w + 10)
        vals = [data[m][g] for m in methods]
        vmax = max(max(vals), 1e-9)
        bar_w = group_w / max(n_m, 1) * 0.8
        for i, m in enumerate(methods):
            h = 200 * vals[i] / vmax
            bx = x0 + i * (group_w / n_m) + 0.1 * (group_w / n_m)
            canvas.rect(bx, 260 - h, bar_w, h, PALETTE[i % len(PALETTE)])
            canvas.text(bx + bar_w / 2, 255 - h, f"{vals[i]:.2f}", size=9)
            canvas.text(bx + bar_w / 2, 275, m, size=8)
        canvas.text(x0 + group_w / 2, 295, name, size=12)
        canvas.line(x0 - 5, 260, x0 + group_w, 260, "#444444")
    canvas.save(path)
    return path


def _plot_feasibility_stack(methods, data, path) -> str:
    canvas = SvgCanvas(640, 320)
    canvas.text(320, 20, "Feasibility-bound breakdown (fraction of steps)", size=14)
    n_m = len(methods)
    colors = {"full": "#55a868", "partial": "#ccb974", "none": "#c44e52"}
    for i, m in enumerate(methods):
        full, part, none = data[m][3], data[m][4], data[m][5]
        x = 60 + i * (520 / max(n_m, 1))
        w = 520 / max(n_m, 1) * 0.6
        y = 260.0
        for frac, key in ((full, "full"), (part, "partial"), (none, "none")):
            h = 200 * frac
            canvas.rect(x, y - h, w, h, colors[key])
            if frac > 0.04:
                canvas.text(x + w / 2, y - h / 2 + 4, f"{frac:.2f}", size=9, fill="#ffffff")
            y -= h
        canvas.text(x + w / 2, 275, m, size=9)
    for j, key in enumerate(colors):
        canvas.rect(60 + j * 110, 290, 12, 12, colors[key])
        canvas.text(80 + j * 110, 300, key, size=10, anchor="start")
    canvas.save(path)
    return path


def _plot_ttf_cdf(curves, path) -> str:
    canvas = SvgCanvas(640, 360)
    canvas.text(320, 20, "Time to feasible service (CDF)", size=14)
    x0, y0, w, h = 60, 300, 540, 240
    t_max = max((pts[-1][0] for pts in curves.values() if pts), default=1.0)
    t_max = max(t_max, 1.0)
    canvas.line(x0, y0, x0 + w, y0, "#444444")
    canvas.line(x0, y0, x0, y0 - h, "#444444")
    for frac in (0.0, 0.5, 1.0):
        canvas.text(x0 - 10, y0 - h * frac + 4, f"{frac:.1f}", size=9, anchor="end")
    for i, (label, pts) in enumerate(curves.items()):
        color = PALETTE[i % len(PALETTE)]
        poly = [(x0, y0)] if pts and pts[0][0] > 0 else []
        prev_y = y0
        for t, frac in pts:
            x = x0 + w * t / t_max
            y = y0 - h * frac
            poly.append((x, prev_y))
            poly.append((x, y))
            prev_y = y
        canvas.polyline(poly, color)
        canvas.rect(x0 + 10, 40 + i * 16, 12, 4, color)
        canvas.text(x0 + 28, 46 + i * 16, label, size=10, anchor="start")
    canvas.text(x0 + w / 2, y0 + 30, "steps", size=11)
    canvas.save(path)
    return path
