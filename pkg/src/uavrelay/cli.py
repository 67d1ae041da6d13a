"""Command-line pipeline: map/dataset generation, training, evaluation, figures.

Each stage writes its artifact plus a ``.manifest.json`` recording input
hashes, parameters and versions; ``reproduce`` chains all stages and
skips any whose manifest still matches, so interrupted runs resume
where they left off.
"""

from __future__ import annotations

import argparse
import os
import sys

from .errors import UavRelayError


def _apply_thread_env() -> None:
    """Honor UAVRELAY_THREADS before numpy (and its BLAS) is imported."""
    n = os.environ.get("UAVRELAY_THREADS")
    if n:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        print(f"error: usage: {message}", file=sys.stderr)
        raise SystemExit(2)


def _summary_line(command: str, detail: str) -> None:
    print(f"{command}: {detail}")


def _section_params(*dataclass_objs) -> dict:
    from dataclasses import asdict

    out = {}
    for obj in dataclass_objs:
        out[type(obj).__name__] = asdict(obj)
    return out


# -- stage implementations (shared by single commands and reproduce) ----------


def _stage_gen_map(cfg, out_path, force: bool = False) -> bool:
    """Returns True if work was done, False if skipped via manifest."""
    from .manifest import manifest_matches, write_manifest
    from .terrain import generate_map, save_map

    params = _section_params(cfg.map)
    if not force and manifest_matches(out_path, "gen-map", params, {}):
        return False
    m = generate_map(cfg.map)
    save_map(m, out_path)
    write_manifest(out_path, "gen-map", params, {})
    return True


def _build_env(cfg, map_path):
    from .env import RelayEnv
    from .terrain import load_map

    terrain = load_map(map_path)
    return RelayEnv(terrain, cfg.env, cfg.radio, cfg.thresholds, cfg.csfub)


def _stage_gen_dataset(cfg, map_path, out_path, force: bool = False):
    from .dataset import generate_dataset
    from .manifest import manifest_matches, write_manifest

    params = _section_params(cfg.env, cfg.radio, cfg.thresholds, cfg.csfub, cfg.dataset)
    inputs = {"map": map_path}
    if not force and manifest_matches(out_path, "gen-dataset", params, inputs):
        return None
    env = _build_env(cfg, map_path)
    summary = generate_dataset(
        env, cfg.dataset.mix, cfg.dataset.n_transitions, cfg.dataset.seed, out_path
    )
    write_manifest(out_path, "gen-dataset", params, inputs)
    return summary


def _repr_train_config(cfg, d_z: int):
    from .codecs import ReprTrainConfig

    return ReprTrainConfig(
        lr=cfg.repr.lr,
        batch=cfg.repr.batch,
        epochs=cfg.repr.epochs,
        beta_kl=cfg.repr.beta_kl,
        seed=cfg.repr.seed,
        hidden=tuple(cfg.repr.hidden),
    )


def _stage_train_repr(cfg, kind: str, d_z: int, data_path, out_path, force: bool = False) -> bool:
    from dataclasses import asdict

    from .codecs import fit_pca, save_codec, train_ae, train_vae
    from .dataset import load_states
    from .manifest import manifest_matches, write_manifest

    params = {"repr": asdict(cfg.repr), "kind": kind, "d_z": d_z}
    inputs = {"data": data_path}
    if not force and manifest_matches(out_path, "train-repr", params, inputs):
        return False
    states = load_states(data_path)
    rcfg = _repr_train_config(cfg, d_z)
    if kind == "pca":
        codec = fit_pca(states, d_z)
    elif kind == "ae":
        codec = train_ae(states, d_z, rcfg, log_path=str(out_path) + ".log.csv")
    elif kind == "vae":
        codec = train_vae(states, d_z, rcfg, log_path=str(out_path) + ".log.csv")
    else:
        raise UavRelayError(f"unknown codec kind {kind!r}")
    save_codec(out_path, codec)
    write_manifest(out_path, "train-repr", params, inputs)
    return True


def _stage_encode(codec_path, data_path, out_path, force: bool = False) -> bool:
    from .codecs import encode_dataset, load_codec
    from .manifest import manifest_matches, write_manifest

    inputs = {"codec": codec_path, "data": data_path}
    if not force and manifest_matches(out_path, "encode", {}, inputs):
        return False
    codec = load_codec(codec_path)
    encode_dataset(codec, data_path, out_path)
    write_manifest(out_path, "encode", {}, inputs)
    return True


def _stage_train_cql(cfg, data_path, codec_path, out_path, seed: int | None = None,
                     force: bool = False) -> bool:
    from dataclasses import asdict, replace

    from .codecs import load_codec
    from .cql import save_policy, train
    from .dataset import read_header
    from .errors import DimensionError
    from .manifest import manifest_matches, write_manifest

    cql_cfg = cfg.cql if seed is None else replace(cfg.cql, seed=seed)
    params = {"cql": asdict(cql_cfg)}
    inputs = {"data": data_path}
    codec_id = "raw"
    if codec_path is not None:
        inputs["codec"] = codec_path
        codec = load_codec(codec_path)
        _, state_dim = read_header(data_path)
        if codec.d_z != state_dim:
            raise DimensionError(
                f"codec d_z {codec.d_z} != dataset state_dim {state_dim}"
            )
        codec_id = f"{codec.kind}{codec.d_z}"
    if not force and manifest_matches(out_path, "train-cql", params, inputs):
        return False
    bundle = train(data_path, cql_cfg, codec_id=codec_id, log_path=str(out_path) + ".log.csv")
    save_policy(out_path, bundle)
    write_manifest(out_path, "train-cql", params, inputs)
    return True


# -- commands ------------------------------------------------------------------


def cmd_gen_map(args) -> int:
    from .config import load_config
    from .terrain import LandCover, load_map

    cfg = load_config(args.config)
    did = _stage_gen_map(cfg, args.out, force=True)
    m = load_map(args.out)
    water = float((m.cover == LandCover.WATER).mean())
    dense = float((m.cover == LandCover.DENSE).mean())
    _summary_line(
        "gen-map",
        f"wrote {args.out} ({m.height}x{m.width} cells @ {m.cell_size_m:g} m, "
        f"water {water:.2f}, dense {dense:.2f})",
    )
    return 0


def cmd_gen_dataset(args) -> int:
    from .config import load_config

    cfg = load_config(args.config)
    summary = _stage_gen_dataset(cfg, args.map, args.out, force=True)
    _summary_line(
        "gen-dataset",
        f"wrote {args.out} ({summary['transitions']} transitions, "
        f"{summary['episodes']} episodes, mean reward {summary['mean_reward']:.4f})",
    )
    return 0


def cmd_train_repr(args) -> int:
    from .config import load_config

    cfg = load_config(args.config)
    kind = args.kind or cfg.repr.kind
    d_z = args.latent or cfg.repr.d_z
    _stage_train_repr(cfg, kind, d_z, args.data, args.out, force=True)
    _summary_line("train-repr", f"wrote {args.out} ({kind}, d_z={d_z})")
    return 0


def cmd_encode(args) -> int:
    _stage_encode(args.codec, args.data, args.out, force=True)
    _summary_line("encode", f"wrote {args.out}")
    return 0


def cmd_train_cql(args) -> int:
    from .config import load_config

    cfg = load_config(args.config)
    _stage_train_cql(cfg, args.data, args.codec, args.out, seed=args.seed, force=True)
    _summary_line("train-cql", f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .codecs import load_codec
    from .config import load_config
    from .cql import load_policy
    from .evaluation import metrics, run_episode, write_trace_csv, METHOD_METRICS_HEADER, _report_row
    from .manifest import write_manifest

    cfg = load_config(args.config)
    env = _build_env(cfg, args.map)
    bundle = load_policy(args.policy)
    codec = load_codec(args.codec) if args.codec else None
    os.makedirs(args.out, exist_ok=True)
    trace_dir = os.path.join(args.out, "traces")
    os.makedirs(trace_dir, exist_ok=True)
    traces = []
    for e in range(cfg.eval.episodes):
        trace = run_episode(env, bundle, codec, episode_seed=cfg.eval.seed + e)
        write_trace_csv(os.path.join(trace_dir, f"episode_{e:03d}.csv"), trace)
        traces.append(trace)
    rep = metrics(traces, cfg.env.num_users, cfg.cql.gamma)
    report_path = os.path.join(args.out, "report.csv")
    with open(report_path, "w", newline="") as f:
        f.write(METHOD_METRICS_HEADER.replace("seed_index", "method") + "\n")
        f.write(_report_row(bundle.codec_id, rep) + "\n")
    inputs = {"map": args.map, "policy": args.policy}
    if args.codec:
        inputs["codec"] = args.codec
    write_manifest(report_path, "eval", _section_params(cfg.eval), inputs)
    _summary_line(
        "eval",
        f"{bundle.codec_id}: avg_served {rep.avg_served:.3f}, normalized "
        f"{rep.normalized_discounted:.3f}, ttf median {rep.ttf_median:.0f} -> {report_path}",
    )
    return 0


def cmd_csfub(args) -> int:
    from .config import load_config
    from .dataset import policy_centroid, policy_coverage, policy_oracle, policy_random
    from .manifest import write_manifest

    import numpy as np

    cfg = load_config(args.config)
    env = _build_env(cfg, args.map)
    world, _ = env.reset(episode_seed=args.seed)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([args.seed, 3])))
    rows = []
    for t in range(cfg.env.episode_len):
        if args.policy == "hold":
            action = 13
        elif args.policy == "centroid":
            action = policy_centroid(env, world)
        elif args.policy == "coverage":
            action = policy_coverage(env, world)
        elif args.policy == "oracle":
            action = policy_oracle(env, world)
        else:
            action = policy_random(rng)
        result = env.step(world, action)
        best = result.info["best_placement"]
        rows.append(
            f"{t},{result.info['n_star']},{best[0]:.3f},{best[1]:.3f},{best[2]:.3f},"
            f"{result.info['n_served']}"
        )
    with open(args.out, "w", newline="") as f:
        f.write("t,n_star,best_x,best_y,best_z,n_served_actual\n")
        for row in rows:
            f.write(row + "\n")
    write_manifest(args.out, "csfub", {"seed": args.seed, "policy": args.policy}, {"map": args.map})
    _summary_line("csfub", f"wrote {args.out} ({cfg.env.episode_len} steps, policy {args.policy})")
    return 0


def _reproduce_methods(cfg) -> list[tuple[str, str | None, int]]:
    """(label, codec kind, d_z) for the standard comparison."""
    d_z = cfg.repr.d_z
    return [
        ("raw", None, 0),
        ("pca", "pca", d_z),
        ("ae", "ae", d_z),
        ("vae32", "vae", 32),
        ("vae64", "vae", 64),
        ("vae128", "vae", 128),
    ]


def _train_cql_task(config_path, data_path, codec_path, out_path, seed):
    _apply_thread_env()
    from .config import load_config

    cfg = load_config(config_path)
    _stage_train_cql(cfg, data_path, codec_path, out_path, seed=seed)
    return out_path


def cmd_reproduce(args) -> int:
    from .codecs import load_codec
    from .config import load_config
    from .cql import load_policy
    from .evaluation import evaluate_suite, plot
    from .manifest import manifest_matches, write_manifest

    cfg = load_config(args.config)
    out = args.out
    os.makedirs(out, exist_ok=True)
    for sub in ("codecs", "latent", "policies", "metrics", "plots"):
        os.makedirs(os.path.join(out, sub), exist_ok=True)

    map_path = os.path.join(out, "map.tmap")
    did = _stage_gen_map(cfg, map_path)
    _summary_line("reproduce", f"map.tmap {'built' if did else 'up to date'}")

    data_path = os.path.join(out, "data.uvds")
    summary = _stage_gen_dataset(cfg, map_path, data_path)
    _summary_line("reproduce", f"data.uvds {'built' if summary else 'up to date'}")

    methods = _reproduce_methods(cfg)
    codec_paths: dict[str, str | None] = {"raw": None}
    latent_paths: dict[str, str] = {"raw": data_path}
    for label, kind, d_z in methods:
        if kind is None:
            continue
        codec_path = os.path.join(out, "codecs", f"{label}.uvwt")
        did = _stage_train_repr(cfg, kind, d_z, data_path, codec_path)
        _summary_line("reproduce", f"codec {label} {'trained' if did else 'up to date'}")
        latent_path = os.path.join(out, "latent", f"{label}.uvds")
        did = _stage_encode(codec_path, data_path, latent_path)
        _summary_line("reproduce", f"latent {label} {'encoded' if did else 'up to date'}")
        codec_paths[label] = codec_path
        latent_paths[label] = latent_path

    tasks = []
    for label, _, _ in methods:
        for k in range(cfg.eval.seeds):
            policy_path = os.path.join(out, "policies", f"{label}_s{k}.uvwt")
            tasks.append((label, k, policy_path))

    if args.jobs > 1:
        import concurrent.futures as cf
        import multiprocessing as mp

        ctx = mp.get_context("spawn")
        with cf.ProcessPoolExecutor(max_workers=args.jobs, mp_context=ctx) as pool:
            futures = {}
            for label, k, policy_path in tasks:
                futures[pool.submit(
                    _train_cql_task, args.config, latent_paths[label],
                    codec_paths[label], policy_path, cfg.cql.seed + k,
                )] = (label, k)
            for fut in cf.as_completed(futures):
                fut.result()
                label, k = futures[fut]
                _summary_line("reproduce", f"policy {label} seed {k} done")
    else:
        for label, k, policy_path in tasks:
            did = _stage_train_cql(
                cfg, latent_paths[label], codec_paths[label], policy_path,
                seed=cfg.cql.seed + k,
            )
            _summary_line(
                "reproduce", f"policy {label} seed {k} {'trained' if did else 'up to date'}"
            )

    metrics_dir = os.path.join(out, "metrics")
    comparison_path = os.path.join(metrics_dir, "comparison.csv")
    eval_inputs = {"map": map_path}
    for label, k, policy_path in tasks:
        eval_inputs[f"policy_{label}_s{k}"] = policy_path
    eval_params = _section_params(cfg.eval) | {"gamma": cfg.cql.gamma}
    if manifest_matches(comparison_path, "evaluate", eval_params, eval_inputs):
        _summary_line("reproduce", "metrics up to date")
    else:
        env = _build_env(cfg, map_path)
        labeled = {}
        for label, _, _ in methods:
            entries = []
            for k in range(cfg.eval.seeds):
                bundle = load_policy(os.path.join(out, "policies", f"{label}_s{k}.uvwt"))
                codec = load_codec(codec_paths[label]) if codec_paths[label] else None
                entries.append((bundle, codec))
            labeled[label] = entries
        results = evaluate_suite(
            env, labeled, cfg.eval.episodes, metrics_dir,
            gamma=cfg.cql.gamma, eval_seed=cfg.eval.seed,
        )
        write_manifest(comparison_path, "evaluate", eval_params, eval_inputs)
        for label, stats in results.items():
            _summary_line(
                "reproduce",
                f"eval {label}: normalized {stats['normalized']:.3f}, "
                f"ttf median {stats['ttf_median']:.0f}",
            )

    plot_outputs = plot(metrics_dir, os.path.join(out, "plots"))
    _summary_line("reproduce", f"wrote {len(plot_outputs)} figures -> {os.path.join(out, 'plots')}")
    _summary_line("reproduce", f"comparison table -> {comparison_path}")
    return 0


def build_parser() -> _Parser:
    p = _Parser(prog="uavrelay", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen-map", help="generate a synthetic terrain map")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_map)

    sp = sub.add_parser("gen-dataset", help="roll behavior policies into an offline dataset")
    sp.add_argument("--config", required=True)
    sp.add_argument("--map", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_dataset)

    sp = sub.add_parser("train-repr", help="fit an observation codec (pca/ae/vae)")
    sp.add_argument("--config", required=True)
    sp.add_argument("--kind", choices=("pca", "ae", "vae"))
    sp.add_argument("--latent", type=int, help="latent dimension override")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train_repr)

    sp = sub.add_parser("encode", help="encode a dataset into latent space")
    sp.add_argument("--codec", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("train-cql", help="train conservative Q-learning offline")
    sp.add_argument("--config", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--codec")
    sp.add_argument("--seed", type=int, help="override cql.seed")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train_cql)

    sp = sub.add_parser("eval", help="roll out a frozen policy and report metrics")
    sp.add_argument("--config", required=True)
    sp.add_argument("--map", required=True)
    sp.add_argument("--policy", required=True)
    sp.add_argument("--codec")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("csfub", help="emit per-step feasibility bound records")
    sp.add_argument("--config", required=True)
    sp.add_argument("--map", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--policy", choices=("hold", "centroid", "coverage", "oracle", "random"),
                    default="hold")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_csfub)

    sp = sub.add_parser("reproduce", help="full pipeline: dataset, codecs, policies, metrics, plots")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--jobs", type=int, default=1, help="parallel policy trainings")
    sp.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    _apply_thread_env()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UavRelayError as e:
        print(f"error: {e.kind}: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: io: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
