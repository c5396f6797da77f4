"""Command-line entry point.

Exit codes: 0 ok, 2 bad flags or unreadable input, 3 bad reward config,
4 dataset/prediction id mismatch, 5 backend unreachable, 6 numerical
divergence, 7 bind failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import secrets
import signal
import socket
import sys
from pathlib import Path
from typing import Optional

from .backends import (
    BackendError,
    PolicyBackendConfig,
    RolloutLog,
    evaluate_group,
    load_replay,
    rollout,
)
from .geometry import Canvas, GeometryError
from .grpo import AdvantageMode, GRPOConfig
from .metrics import report
from .protocol import (
    DatasetError,
    ProtocolError,
    canvas_from_json,
    layout_from_json,
    load_dataset,
    serialize_layout,
)
from .render import render_svg
from .rewards import RewardConfig, RewardConfigError, hybrid_reward, quality_reward
from .toy import TrainConfig, TrainingDivergence, train

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_MISMATCH = 4
EXIT_BACKEND = 5
EXIT_DIVERGED = 6
EXIT_BIND = 7

log = logging.getLogger("layoutrl")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CliError(EXIT_INPUT, f"cannot read {path}: {exc}") from exc


def _read_json(path):
    try:
        return json.loads(_read_text(path))
    except ValueError as exc:
        raise CliError(EXIT_INPUT, f"{path}: invalid JSON: {exc}") from exc


def _load_canvas(path) -> Canvas:
    try:
        return canvas_from_json(_read_json(path))
    except (ProtocolError, GeometryError) as exc:
        raise CliError(EXIT_INPUT, f"{path}: {exc}") from exc


def _load_config(path: Optional[str]) -> RewardConfig:
    if path is None:
        return RewardConfig()
    try:
        return RewardConfig.load(path)
    except RewardConfigError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc


def _seed(args) -> int:
    if args.seed is None:
        args.seed = secrets.randbits(31)
        print(f"seed: {args.seed}", file=sys.stderr)
    return args.seed


# ---------------------------------------------------------------------------
# subcommands

def cmd_reward(args) -> int:
    config = _load_config(args.config)
    canvas = _load_canvas(args.canvas)
    raw = _read_text(args.response)
    reference = None
    if args.reference:
        try:
            reference = layout_from_json(_read_json(args.reference), canvas.id)
        except (ProtocolError, GeometryError) as exc:
            raise CliError(EXIT_INPUT, f"{args.reference}: {exc}") from exc
    bd = hybrid_reward(raw, canvas, reference, config.weights, config.policy)
    print(json.dumps(bd.to_dict(), indent=2))
    return EXIT_OK


def _read_predictions(path) -> dict:
    preds = {}
    text = _read_text(path)
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            sid = str(obj.get("id", obj.get("source_id")))
            preds[sid] = layout_from_json(obj, sid)
        except (ValueError, ProtocolError, GeometryError, AttributeError) as exc:
            raise CliError(EXIT_INPUT, f"{path}:{lineno}: {exc}") from exc
    return preds


def cmd_bench(args) -> int:
    try:
        records, _ = load_dataset(args.dataset, args.format)
    except DatasetError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from exc
    preds = _read_predictions(args.predictions)
    ids = {r.source_id for r in records}
    if not preds or set(preds) != ids:
        missing = sorted(ids - set(preds))[:5]
        extra = sorted(set(preds) - ids)[:5]
        raise CliError(EXIT_MISMATCH, f"prediction ids do not match dataset (missing {missing}, unknown {extra})")
    items = [(preds[r.source_id], r.canvas) for r in records]
    rep = report(items, measure=args.overlap)
    if args.output:
        Path(args.output).write_text(rep.to_json(indent=2) + "\n", encoding="utf-8")
    if args.json:
        print(rep.to_json(indent=2))
    else:
        print(rep.to_table(Path(args.predictions).stem))
    return EXIT_OK


def cmd_rollout(args) -> int:
    config = _load_config(args.config)
    try:
        records, _ = load_dataset(args.dataset, args.format)
    except DatasetError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from exc
    template = _read_text(args.template) if args.template else None
    seed = _seed(args) if args.backend == "random" else args.seed
    try:
        bcfg = PolicyBackendConfig(
            kind=args.backend, endpoint=args.endpoint, model_name=args.model, temperature=args.temperature,
            group_size=args.group_size, timeout=args.timeout, max_retries=args.max_retries, seed=seed,
            replay_path=args.replay, parallelism=args.parallelism, api_key_env=args.api_key_env,
            retry_backoff=args.retry_backoff,
        )
    except BackendError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from exc
    grpo_cfg = GRPOConfig(advantage_mode=args.advantage_mode)
    cache = load_replay(args.replay) if args.backend == "replay" else None
    rlog = RolloutLog(args.log) if args.log else None
    if rlog is not None:
        rlog.path.write_text("", encoding="utf-8")
    out = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        for rec in records:
            try:
                group = rollout(rec.canvas, bcfg, template, replay_cache=cache)
            except BackendError as exc:
                raise CliError(EXIT_BACKEND, str(exc)) from exc
            ev = evaluate_group(group, rec.canvas, rec.reference if args.use_reference else None,
                                config.weights, grpo_cfg, config.policy, with_advantages=len(group) >= 2)
            if rlog is not None:
                rlog.append(group, ev)
            out.write(json.dumps(ev.to_dict()) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def _svg_snapshots(svg_dir: Path, every: int, iterations: int, canvas):
    svg_dir.mkdir(parents=True, exist_ok=True)

    def callback(it, policy):
        if it % every == 0 or it == iterations - 1:
            (svg_dir / f"iter_{it:05d}.svg").write_text(render_svg(policy.to_layout(), canvas), encoding="utf-8")

    return callback


def cmd_train_toy(args) -> int:
    config = _load_config(args.config)
    canvas = _load_canvas(args.canvas)
    if not canvas.manifest:
        raise CliError(EXIT_INPUT, f"{args.canvas}: canvas has no element manifest")
    try:
        cfg = TrainConfig(
            iterations=args.iterations, group_size=args.group_size, learning_rate=args.learning_rate,
            sigma0=args.sigma0, sigma_decay=args.sigma_decay, seed=_seed(args), advantage_mode=args.advantage_mode,
        )
    except ValueError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from exc
    callback = _svg_snapshots(Path(args.svg_dir), args.svg_every, cfg.iterations, canvas) if args.svg_dir else None

    try:
        trace = train(canvas, config.weights, cfg, config.policy, callback=callback)
    except TrainingDivergence as exc:
        raise CliError(EXIT_DIVERGED, str(exc)) from exc
    csv_text = trace.to_csv()
    if args.trace:
        Path(args.trace).write_text(csv_text, encoding="utf-8")
    else:
        sys.stdout.write(csv_text)
    final = trace.mean_layout
    if args.layout_out:
        Path(args.layout_out).write_text(serialize_layout(final, canvas) + "\n", encoding="utf-8")
    q = quality_reward(final, canvas, config.weights, config.policy)
    print(
        f"initial mean reward {trace.steps[0].mean_reward:.4f}, final {trace.steps[-1].mean_reward:.4f}, "
        f"mean-layout quality {q:.4f}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_render(args) -> int:
    doc = _read_json(args.layout)
    try:
        canvas = _load_canvas(args.canvas) if args.canvas else (
            canvas_from_json(doc) if isinstance(doc, dict) and "canvas" in doc else None
        )
        layout = layout_from_json(doc, canvas.id if canvas else "canvas")
    except (ProtocolError, GeometryError) as exc:
        raise CliError(EXIT_INPUT, f"{args.layout}: {exc}") from exc
    Path(args.output).write_text(render_svg(layout, canvas), encoding="utf-8")
    return EXIT_OK


def _graceful_server(config):
    """uvicorn server whose SIGINT/SIGTERM handling ends in a normal return, not a re-raised signal."""
    import contextlib

    import uvicorn

    class Server(uvicorn.Server):
        @contextlib.contextmanager
        def capture_signals(self):
            def stop(signum, frame):
                if self.should_exit and signum == signal.SIGINT:
                    self.force_exit = True
                self.should_exit = True

            previous = {sig: signal.signal(sig, stop) for sig in (signal.SIGINT, signal.SIGTERM)}
            try:
                yield
            finally:
                for sig, handler in previous.items():
                    signal.signal(sig, handler)

    return Server(config)


def cmd_serve(args) -> int:
    import uvicorn

    from .service import RewardService, ServiceConfig, create_app

    try:
        scfg = ServiceConfig.from_env(
            host=args.host, port=args.port, reward_config_path=args.config,
            max_concurrent=args.max_concurrent,
        )
    except ValueError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from exc
    try:
        service = RewardService(scfg)
    except RewardConfigError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc

    try:
        sock = socket.socket(socket.AF_INET6 if ":" in scfg.host else socket.AF_INET)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((scfg.host, scfg.port))
    except OSError as exc:
        raise CliError(EXIT_BIND, f"cannot bind {scfg.host}:{scfg.port}: {exc}") from exc

    if hasattr(signal, "SIGHUP"):
        def _reload(signum, frame):
            try:
                log.info("reward config reloaded: %s", service.reload_config())
            except RewardConfigError as exc:
                log.error("reload failed: %s", exc)

        signal.signal(signal.SIGHUP, _reload)

    server = _graceful_server(uvicorn.Config(create_app(service), log_level=args.log_level.lower()))
    host, port = sock.getsockname()[:2]
    print(f"serving on http://{host}:{port}", file=sys.stderr, flush=True)
    server.run(sockets=[sock])
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="layoutrl", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default=os.environ.get("LAYOUTRL_LOG_LEVEL", "WARNING"))
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("reward", help="score one response against a canvas")
    s.add_argument("canvas")
    s.add_argument("response")
    s.add_argument("--reference")
    s.add_argument("--config")
    s.set_defaults(func=cmd_reward)

    s = sub.add_parser("bench", help="Ove/Und/Occ table for a prediction file")
    s.add_argument("dataset")
    s.add_argument("predictions")
    s.add_argument("--format", default="canonical", choices=["canonical", "pku_like", "cgl_like"])
    s.add_argument("--overlap", default="jaccard", choices=["jaccard", "min_area"])
    s.add_argument("--json", action="store_true", help="print JSON instead of the table")
    s.add_argument("-o", "--output", help="also write the JSON report here")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("rollout", help="sample and score candidate groups")
    s.add_argument("dataset")
    s.add_argument("--format", default="canonical", choices=["canonical", "pku_like", "cgl_like"])
    s.add_argument("--backend", required=True, choices=["random", "remote", "replay"])
    s.add_argument("--group-size", type=_positive_int, default=8)
    s.add_argument("--seed", type=int)
    s.add_argument("--endpoint")
    s.add_argument("--model")
    s.add_argument("--temperature", type=float, default=1.0)
    s.add_argument("--timeout", type=float, default=60.0)
    s.add_argument("--max-retries", type=int, default=3)
    s.add_argument("--retry-backoff", type=float, default=0.5)
    s.add_argument("--parallelism", type=_positive_int, default=4)
    s.add_argument("--api-key-env", default="LAYOUTRL_API_KEY")
    s.add_argument("--replay", help="rollout log to replay")
    s.add_argument("--template", help="prompt template file")
    s.add_argument("--config")
    s.add_argument("--advantage-mode", default="mean_std", choices=[m.value for m in AdvantageMode])
    s.add_argument("--no-reference", dest="use_reference", action="store_false")
    s.add_argument("--log", help="append-only rollout log (NDJSON)")
    s.add_argument("-o", "--output", help="GroupEvaluation NDJSON (default stdout)")
    s.set_defaults(func=cmd_rollout)

    s = sub.add_parser("train-toy", help="train the Gaussian toy policy on one canvas")
    s.add_argument("canvas")
    s.add_argument("--iterations", type=_positive_int, default=500)
    s.add_argument("--group-size", type=int, default=8)
    s.add_argument("--seed", type=int)
    s.add_argument("--learning-rate", type=float, default=TrainConfig.learning_rate)
    s.add_argument("--sigma0", type=float, default=TrainConfig.sigma0)
    s.add_argument("--sigma-decay", type=float, default=TrainConfig.sigma_decay)
    s.add_argument("--advantage-mode", default="mean_std", choices=[m.value for m in AdvantageMode])
    s.add_argument("--config")
    s.add_argument("--trace", help="CSV output (default stdout)")
    s.add_argument("--layout-out", help="final mean layout JSON")
    s.add_argument("--svg-dir", help="write mean-layout SVG snapshots here")
    s.add_argument("--svg-every", type=_positive_int, default=50)
    s.set_defaults(func=cmd_train_toy)

    s = sub.add_parser("render", help="render a layout as SVG")
    s.add_argument("layout")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--canvas")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("serve", help="run the HTTP reward service")
    s.add_argument("--host")
    s.add_argument("--port", type=int)
    s.add_argument("--config")
    s.add_argument("--max-concurrent", type=int)
    s.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(message)s")
    if getattr(args, "group_size", 2) < 2 and args.command == "train-toy":
        parser.error("--group-size must be >= 2 for training")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
