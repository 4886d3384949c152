"""Command-line client for the service.

By default requests run against the app in-process (no server needed); pass
--server to talk to a remote instance.  Exit codes: 0 success, 2 config error,
3 data error, 4 runtime/transport error.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys
from typing import Optional

import httpx

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4

_KIND_EXIT = {"config": EXIT_CONFIG, "data": EXIT_DATA, "runtime": EXIT_RUNTIME}


class CliFailure(Exception):
    def __init__(self, exit_code: int, message: str):
        super().__init__(message)
        self.exit_code = exit_code


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CliFailure(EXIT_CONFIG, f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliFailure(EXIT_CONFIG, f"config file {path} is not valid JSON: {exc}") from None


async def _post_async(server: Optional[str], path: str, payload: dict) -> dict:
    timeout = httpx.Timeout(None)
    if server:
        client = httpx.AsyncClient(base_url=server, timeout=timeout)
    else:
        from .service import app

        client = httpx.AsyncClient(
            transport=httpx.ASGITransport(app=app), base_url="http://prototrain", timeout=timeout
        )
    async with client:
        response = await client.post(path, json=payload)
    if response.status_code >= 400:
        raise CliFailure(*_classify_error(response))
    return response.json()


def _classify_error(response: httpx.Response) -> tuple[int, str]:
    try:
        detail = response.json().get("detail")
    except json.JSONDecodeError:
        detail = None
    if isinstance(detail, dict) and "kind" in detail:
        kind = detail["kind"]
        return _KIND_EXIT.get(kind, EXIT_RUNTIME), f"{kind} error: {detail.get('message', '')}"
    if isinstance(detail, list):  # pydantic validation errors
        parts = []
        for err in detail:
            loc = ".".join(str(x) for x in err.get("loc", []) if x != "body")
            parts.append(f"{loc}: {err.get('msg', 'invalid')}")
        return EXIT_CONFIG, "config error: " + "; ".join(parts)
    return EXIT_RUNTIME, f"request failed with status {response.status_code}: {response.text}"


def _post(server: Optional[str], path: str, payload: dict) -> dict:
    try:
        return asyncio.run(_post_async(server, path, payload))
    except httpx.HTTPError as exc:
        raise CliFailure(EXIT_RUNTIME, f"transport error: {exc}") from None


def _abspath(path: str) -> str:
    return os.path.abspath(path)


def cmd_gen_data(args) -> int:
    payload = _load_config(args.config)
    payload["out_path"] = _abspath(args.out)
    if args.seed is not None:
        payload.setdefault("synthetic", {})["seed"] = args.seed
        if isinstance(payload.get("noise"), dict):
            payload["noise"]["seed"] = args.seed + 1
    info = _post(args.server, "/datasets/generate", payload)
    print(
        f"wrote {info['path']}: N={info['n_samples']} K={info['num_classes']} "
        f"d={info['dim']} noise_rate={info['noise_rate']:.4f}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    if args.out is not None:
        cfg["out_dir"] = args.out
    for key in ("dataset", "out_dir"):
        if key in cfg and isinstance(cfg[key], str):
            cfg[key] = _abspath(cfg[key])
    if args.seed is not None:
        cfg.setdefault("train", {})["seed"] = args.seed
    summary = _post(args.server, "/runs/train", cfg)
    corr = summary.get("final_correction_accuracy")
    corr_text = "n/a" if corr is None else f"{corr:.4f}"
    base = summary.get("noisy_baseline")
    base_text = "n/a" if base is None else f"{base:.4f}"
    print(
        f"run complete: test_acc={summary['final_test_accuracy']:.4f} "
        f"corrected_acc={corr_text} noisy_baseline={base_text} out={summary['out_dir']}"
    )
    for note in summary.get("notes", []):
        print(f"note: {note}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    if args.out is not None:
        cfg["out_dir"] = args.out
    for key in ("dataset", "out_dir"):
        if key in cfg and isinstance(cfg[key], str):
            cfg[key] = _abspath(cfg[key])
    if args.seed is not None:
        cfg.setdefault("train", {})["seed"] = args.seed
    cfg["threads"] = args.threads
    out = _post(args.server, "/sweeps", cfg)
    print(f"sweep over {out['axis']}: {out['cells']} cells ({out['failed_cells']} failed)")
    for agg in out["aggregates"]:
        mean = agg["mean_test_acc"]
        std = agg["std_test_acc"]
        if mean is None:
            print(f"  {agg['value']}: no successful cells")
        else:
            print(f"  {agg['value']}: test_acc {mean:.4f} +- {std:.4f} over {agg['count']} seeds")
    for err in out["errors"]:
        print(f"cell error: {err}")
    print(f"artifacts in {out['out_dir']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.config:
        cfg = _load_config(args.config)
    else:
        cfg = {}
    if args.checkpoint:
        cfg["checkpoint"] = args.checkpoint
    if args.dataset:
        cfg["dataset"] = args.dataset
    for key in ("checkpoint", "dataset"):
        if key in cfg and isinstance(cfg[key], str):
            cfg[key] = _abspath(cfg[key])
    out = _post(args.server, "/evaluations", cfg)
    true_acc = out.get("accuracy_vs_true")
    true_text = "n/a" if true_acc is None else f"{true_acc:.4f}"
    print(
        f"evaluated {out['n_samples']} samples: accuracy_vs_true={true_text} "
        f"accuracy_vs_noisy={out['accuracy_vs_noisy']:.4f}"
    )
    if out.get("per_class_accuracy"):
        per = " ".join(
            f"{c}:{'n/a' if v is None else f'{v:.4f}'}" for c, v in enumerate(out["per_class_accuracy"])
        )
        print(f"per-class accuracy: {per}")
    return EXIT_OK


def _fmt(value, width: int = 8) -> str:
    if value is None:
        return "absent".rjust(width)
    return f"{value:.4f}".rjust(width)


def render_report(tables: dict) -> str:
    lines = [f"run report: {tables['run_dir']}"]
    overall = tables["overall"]
    lines.append("label accuracy (train split):")
    lines.append(f"  noisy baseline      {_fmt(overall.get('noisy_baseline'))}")
    lines.append(f"  corrected (initial) {_fmt(overall.get('correction_initial'))}")
    lines.append(f"  corrected (final)   {_fmt(overall.get('correction_final'))}")
    lines.append(f"  final test accuracy {_fmt(overall.get('final_test_accuracy'))}")
    per_class = tables.get("per_class")
    if per_class:
        lines.append("per-class label accuracy:")
        lines.append("  class    noisy  corrected_initial  corrected_final")
        for row in per_class:
            lines.append(
                f"  {row['class']:>5}"
                f"  {_fmt(row.get('noisy_accuracy'), 7)}"
                f"  {_fmt(row.get('corrected_initial_accuracy'), 17)}"
                f"  {_fmt(row.get('corrected_final_accuracy'), 15)}"
            )
    else:
        lines.append("per-class label accuracy: absent (no corrections or no true labels)")
    epochs = tables.get("epochs", [])
    if epochs:
        lines.append("epochs:")
        lines.append("  epoch  total_loss  noisy_loss  corrected_loss  train_acc  test_acc  corrected_acc")
        for rec in epochs:
            lines.append(
                f"  {rec['epoch']:>5}"
                f"  {_fmt(rec.get('total_loss'), 10)}"
                f"  {_fmt(rec.get('noisy_loss'), 10)}"
                f"  {_fmt(rec.get('corrected_loss'), 14)}"
                f"  {_fmt(rec.get('train_accuracy'), 9)}"
                f"  {_fmt(rec.get('test_accuracy'), 8)}"
                f"  {_fmt(rec.get('corrected_label_accuracy'), 13)}"
            )
    for note in tables.get("notes", []):
        lines.append(f"note: {note}")
    return "\n".join(lines)


def cmd_report(args) -> int:
    payload = {"run_dir": _abspath(args.run_dir)}
    tables = _post(args.server, "/reports", payload)
    print(render_report(tables))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("prototrain.service:app", host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prototrain", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_out=False, needs_threads=False):
        p.add_argument("--server", default=None, help="base URL of a running service; default runs in-process")
        p.add_argument("--seed", type=int, default=None, help="override the config's master seed")
        if needs_out:
            p.add_argument("--out", default=None, help="override the output path/directory")
        if needs_threads:
            p.add_argument("--threads", type=int, default=1, help="worker cap; affects speed only, never results")

    p = sub.add_parser("gen-data", help="generate a synthetic noisy dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output dataset path (.smpd binary or .csv)")
    p.add_argument("--server", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run the self-training loop")
    p.add_argument("--config", required=True)
    add_common(p, needs_out=True, needs_threads=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="run an ablation sweep over one config axis")
    p.add_argument("--config", required=True)
    add_common(p, needs_out=True, needs_threads=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--server", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render tables for a completed run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--server", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliFailure as exc:
        print(str(exc), file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
