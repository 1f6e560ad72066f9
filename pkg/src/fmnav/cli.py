"""Command line entry point: run, bench, render, gen-scenes."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_PROVIDER, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _configs(path):
    from .agent import AgentConfig
    from .harness import load_config
    from .scenegen import GeneratorParams

    if path is None:
        return AgentConfig(), GeneratorParams()
    try:
        return load_config(path)
    except (OSError, ValueError, TypeError) as e:
        raise UsageError(f"bad config {path}: {e}") from e


def _with_overrides(cfg, **kw):
    from .agent import AgentConfig

    d = cfg.to_dict()
    d.update({k: v for k, v in kw.items() if v is not None})
    try:
        return AgentConfig.from_dict(d)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from e


def cmd_run(args) -> int:
    from .agent import Navigator
    from .mapping import save_map
    from .simulator import SceneError, load_scene

    cfg, _ = _configs(args.config)
    cfg = _with_overrides(cfg, seed=args.seed, max_steps=args.max_steps)
    try:
        scene = load_scene(args.scene, cfg.agent_radius, cfg.success_radius)
    except (OSError, SceneError, ValueError, KeyError) as e:
        raise UsageError(f"cannot load scene {args.scene}: {e}") from e
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    instruction = args.instruction or f"Find the {scene.goal_labels[0].phrase}."
    nav = Navigator(scene, instruction, args.providers, cfg, trace_path=out / "trace.jsonl")
    res = nav.run()
    save_map(nav.map, out / "map.vssm")
    summary = res.summary()
    (out / "result.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    print(json.dumps({k: summary[k] for k in ("success", "steps", "path_length", "optimal_length", "spl",
                                              "failure_class", "provider_error")}, sort_keys=True))
    return EXIT_PROVIDER if res.provider_error else EXIT_OK


def cmd_bench(args) -> int:
    from .harness import TIERS, episodes_from_dir, generated_episodes, run_benchmark

    cfg, gen = _configs(args.config)
    cfg = _with_overrides(cfg, max_steps=args.max_steps)
    tiers = tuple(args.tiers.split(","))
    if set(tiers) - set(TIERS):
        raise UsageError(f"tiers must be drawn from {','.join(TIERS)}")
    if (args.scenes_dir is None) == (args.generate is None):
        raise UsageError("give exactly one of --scenes-dir or --generate")
    if args.generate is not None:
        if args.generate < 1:
            raise UsageError("--generate must be positive")
        episodes = generated_episodes(args.generate, args.seed, gen, tiers)
    else:
        try:
            episodes = episodes_from_dir(args.scenes_dir, tiers)
        except ValueError as e:
            raise UsageError(str(e)) from e
    report = run_benchmark(episodes, args.providers, cfg, args.parallel, args.out)
    print(report.table())
    if args.out:
        print(f"report written to {Path(args.out) / 'report.json'}")
    if report.provider_failures == len(report.episodes):
        return EXIT_PROVIDER
    return EXIT_OK


def cmd_render(args) -> int:
    from .harness import render_episode

    for p in (args.trace, args.map):
        if not Path(p).exists():
            raise UsageError(f"no such file: {p}")
    info = render_episode(args.trace, args.map, args.out)
    if args.layers:
        from .mapping import export_images, load_map

        export_images(load_map(args.map), Path(args.out).with_suffix(""))
    print(json.dumps(info, sort_keys=True))
    return EXIT_OK


def cmd_gen_scenes(args) -> int:
    from .scenegen import GeneratorParams, generate_scene
    from .simulator import save_scene

    params = GeneratorParams()
    if args.params:
        try:
            params = GeneratorParams.from_dict({**params.to_dict(), **json.loads(Path(args.params).read_text())})
        except (OSError, ValueError, TypeError) as e:
            raise UsageError(f"bad generator params {args.params}: {e}") from e
    if args.count < 1:
        raise UsageError("--count must be positive")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        seed = args.seed + i
        save_scene(generate_scene(seed, params), out / f"scene_{seed:05d}.json")
    print(f"wrote {args.count} scenes to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fmnav", description="Language-guided object navigation in generated 2.5D homes.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    r = sub.add_parser("run", help="run one episode")
    r.add_argument("--scene", required=True)
    r.add_argument("--instruction", help="defaults to 'Find the <scene goal>.'")
    r.add_argument("--providers", choices=("mock", "remote"), default="mock")
    r.add_argument("--seed", type=int)
    r.add_argument("--max-steps", type=int)
    r.add_argument("--config")
    r.add_argument("--out", default="run_out")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="run a batch of episodes and report SR/SPL")
    b.add_argument("--scenes-dir")
    b.add_argument("--generate", type=int, metavar="N")
    b.add_argument("--seed", type=int, default=0, help="first scene seed with --generate")
    b.add_argument("--tiers", default="bare", help="comma list of bare,attributed,demand")
    b.add_argument("--providers", choices=("mock", "remote"), default="mock")
    b.add_argument("--config")
    b.add_argument("--max-steps", type=int)
    b.add_argument("--parallel", type=int, default=1)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    d = sub.add_parser("render", help="draw an episode from its trace and map dump")
    d.add_argument("--trace", required=True)
    d.add_argument("--map", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--layers", action="store_true", help="also export one image per map layer")
    d.set_defaults(func=cmd_render)

    g = sub.add_parser("gen-scenes", help="write generated scenes as JSON")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--params", help="JSON file of generator parameters")
    g.add_argument("--out", default="scenes")
    g.set_defaults(func=cmd_gen_scenes)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        from .reasoning import ProviderError

        if isinstance(e, ProviderError):
            print(f"provider failure: {e}", file=sys.stderr)
            return EXIT_PROVIDER
        logging.getLogger(__name__).exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
