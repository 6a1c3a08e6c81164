"""Command-line entry point: indexing, analysis, and benchmark evaluation.

Exit codes are the machine contract: 0 success/secure, 3 vulnerable,
1 user error, 2 provider or infrastructure error. Configuration precedence
is flags > config file > defaults, and the effective configuration is
echoed into every report.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import evalharness
from .detector import DetectorConfig, analyze
from .embedding import EncoderProvider, ReferenceEncoder, RemoteEncoderProvider, embed
from .errors import (
    ConfigError,
    EmptyProject,
    MissingPrediction,
    ProviderError,
    VulnReachError,
)
from .gateway import (
    ChatGateway,
    ChatProvider,
    PromptLibrary,
    RemoteChatProvider,
    ReplayChatProvider,
    ScriptedChatProvider,
    Transcript,
)
from .model import Judgment, VulnSpec
from .segmenter import DEFAULT_IGNORE_GLOBS, SegmenterConfig, segment_project
from .store import StoreEntry, VectorStore

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_PROVIDER_ERROR = 2
EXIT_VULNERABLE = 3

_CONFIG_KEYS = {
    "theta",
    "tau",
    "top_k",
    "max_iterations",
    "parallelism",
    "encoder",
    "chat",
    "ignore_globs",
    "prompts_dir",
}


@dataclass
class ToolConfig:
    theta: int = 2500
    tau: float = 0.35
    top_k: int = 10
    max_iterations: int = 5
    parallelism: int = 1
    encoder: dict[str, Any] = field(default_factory=lambda: {"provider": "reference", "dims": 256})
    chat: dict[str, Any] = field(default_factory=dict)
    ignore_globs: list[str] = field(default_factory=lambda: list(DEFAULT_IGNORE_GLOBS))
    prompts_dir: str | None = None

    @classmethod
    def load(cls, path: Path | str | None) -> "ToolConfig":
        cfg = cls()
        if path is None:
            return cfg
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        unknown = set(raw) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"config {path} has unknown keys: {sorted(unknown)}")
        for key, value in raw.items():
            setattr(cfg, key, value)
        cfg.validate()
        return cfg

    def apply_flags(self, args: argparse.Namespace) -> "ToolConfig":
        if getattr(args, "theta", None) is not None:
            self.theta = args.theta
        if getattr(args, "tau", None) is not None:
            self.tau = args.tau
        if getattr(args, "encoder", None) is not None:
            self.encoder = {"provider": args.encoder, "dims": self.encoder.get("dims", 256)}
        self.validate()
        return self

    def validate(self) -> None:
        if not isinstance(self.theta, int) or self.theta < 1:
            raise ConfigError(f"theta must be a positive integer, got {self.theta!r}")
        if not 0.0 < float(self.tau) <= 1.0:
            raise ConfigError(f"tau must be in (0, 1], got {self.tau!r}")
        if not isinstance(self.top_k, int) or self.top_k < 1:
            raise ConfigError(f"top_k must be a positive integer, got {self.top_k!r}")
        if not isinstance(self.max_iterations, int) or self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be positive, got {self.max_iterations!r}")
        if not isinstance(self.parallelism, int) or self.parallelism < 1:
            raise ConfigError(f"parallelism must be positive, got {self.parallelism!r}")

    def echo(self) -> dict[str, Any]:
        return {
            "theta": self.theta,
            "tau": self.tau,
            "top_k": self.top_k,
            "max_iterations": self.max_iterations,
            "parallelism": self.parallelism,
            "encoder": dict(self.encoder),
            "chat": {k: v for k, v in self.chat.items() if "key" not in k.lower()},
            "ignore_globs": list(self.ignore_globs),
            "prompts_dir": self.prompts_dir,
        }

    def detector(self) -> DetectorConfig:
        return DetectorConfig(
            tau=float(self.tau),
            top_k=self.top_k,
            max_iterations=self.max_iterations,
            parallelism=self.parallelism,
        )

    def segmenter(self) -> SegmenterConfig:
        return SegmenterConfig(theta=self.theta)

    def prompts(self) -> PromptLibrary:
        if self.prompts_dir:
            return PromptLibrary.from_dir(self.prompts_dir)
        return PromptLibrary.bundled()


def build_encoder(spec: Mapping[str, Any]) -> EncoderProvider:
    provider = spec.get("provider", "reference")
    if provider == "reference":
        return ReferenceEncoder(dims=int(spec.get("dims", 256)))
    if provider in ("openai-compat", "remote"):
        try:
            return RemoteEncoderProvider(
                name=spec.get("name", provider),
                model_id=str(spec["model"]),
                endpoint=str(spec["endpoint"]),
                dims=int(spec["dims"]),
                api_key_env=str(spec["api_key_env"]),
                batch_limit=int(spec.get("batch_limit", 64)),
            )
        except KeyError as exc:
            raise ConfigError(f"encoder config missing key {exc}") from exc
    raise ConfigError(f"unknown encoder provider {provider!r}")


def build_chat(spec: Mapping[str, Any]) -> ChatProvider:
    provider = spec.get("provider")
    if provider == "scripted":
        try:
            return ScriptedChatProvider.from_file(spec["script_path"])
        except KeyError as exc:
            raise ConfigError("scripted chat config needs script_path") from exc
        except (OSError, json.JSONDecodeError, ValueError) as exc:
            raise ConfigError(f"cannot load chat script: {exc}") from exc
    if provider == "replay":
        try:
            return ReplayChatProvider(Transcript.load(spec["transcript_path"]))
        except KeyError as exc:
            raise ConfigError("replay chat config needs transcript_path") from exc
    if provider in ("openai-compat", "remote"):
        try:
            return RemoteChatProvider(
                name=spec.get("name", provider),
                model_id=str(spec["model"]),
                endpoint=str(spec["endpoint"]),
                api_key_env=str(spec["api_key_env"]),
                max_output_tokens=int(spec.get("max_output_tokens", 2048)),
                context_window=int(spec.get("context_window", 100_000)),
            )
        except KeyError as exc:
            raise ConfigError(f"chat config missing key {exc}") from exc
    raise ConfigError(
        "chat provider config required (provider: scripted | replay | openai-compat)"
    )


# -- commands ----------------------------------------------------------------


def cmd_index(args: argparse.Namespace) -> int:
    config = ToolConfig.load(args.config).apply_flags(args)
    encoder = build_encoder(config.encoder)
    try:
        blocks = segment_project(
            Path(args.project), config.segmenter(), ignore_globs=tuple(config.ignore_globs)
        )
    except EmptyProject:
        print("error: no source files found under the project root", file=sys.stderr)
        return EXIT_USER_ERROR
    try:
        vectors = embed(encoder, [b.source for b in blocks])
    except ProviderError as exc:
        print(f"error: embedding provider failed: {exc}", file=sys.stderr)
        return EXIT_PROVIDER_ERROR
    store = VectorStore.create(Path(args.out), encoder.dims)
    store.insert([StoreEntry(b, v) for b, v in zip(blocks, vectors)])
    print(f"indexed {store.count()} blocks at dims {store.dims} -> {args.out}")
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    config = ToolConfig.load(args.config).apply_flags(args)
    try:
        vuln = VulnSpec.from_dict(json.loads(Path(args.vuln).read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: invalid vulnerability spec: {exc}", file=sys.stderr)
        return EXIT_USER_ERROR
    store = VectorStore.open(args.index)
    encoder = build_encoder(config.encoder)
    if args.transcript:
        chat_provider: ChatProvider = ReplayChatProvider(Transcript.load(args.transcript))
    else:
        chat_provider = build_chat(config.chat)

    report_path = Path(args.report)
    transcript_path = report_path.with_name(report_path.name + ".transcript.jsonl")
    gateway = ChatGateway(
        chat_provider, config.prompts(), Transcript(sink_path=transcript_path)
    )
    try:
        verdict = analyze(
            store,
            encoder,
            gateway,
            vuln,
            config.detector(),
            project_id=args.project_id,
            transcript_path=str(transcript_path),
        )
    except ProviderError as exc:
        print(f"error: chat provider failed: {exc}", file=sys.stderr)
        return EXIT_PROVIDER_ERROR
    report = {
        "generated_at": datetime.now(timezone.utc).isoformat(),
        "config": config.echo(),
        **verdict.to_dict(),
    }
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(
        f"{verdict.project_id}: {verdict.project_judgment.value}"
        f" ({len(verdict.per_candidate)} candidate(s)) -> {args.report}"
    )
    return EXIT_VULNERABLE if verdict.project_judgment is Judgment.VULNERABLE else EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = ToolConfig.load(args.config).apply_flags(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.from_predictions:
        return _evaluate_from_predictions(args, out_dir)

    try:
        manifest = evalharness.BenchmarkManifest.from_file(args.manifest)
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: invalid manifest {args.manifest}: {exc}", file=sys.stderr)
        return EXIT_USER_ERROR
    encoder = build_encoder(config.encoder)
    chat_provider = build_chat(config.chat)
    harness = evalharness.HarnessConfig(
        theta=config.theta,
        tau=float(config.tau),
        top_k=config.top_k,
        max_iterations=config.max_iterations,
        parallelism=config.parallelism,
        ignore_globs=tuple(config.ignore_globs),
    )
    if args.sweep_theta:
        reports = evalharness.run_theta_sweep(
            manifest, harness, encoder, chat_provider, out_dir=out_dir, prompts=config.prompts()
        )
        for theta, report in sorted(reports.items()):
            m = report["metrics"]
            print(f"theta={theta}: {_format_metrics(m)}")
    else:
        report = evalharness.run_benchmark(
            manifest, harness, encoder, chat_provider, out_dir=out_dir, prompts=config.prompts()
        )
        print(evalharness.render_table(report), end="")
    return EXIT_OK


def _evaluate_from_predictions(args: argparse.Namespace, out_dir: Path) -> int:
    try:
        raw = json.loads(Path(args.from_predictions).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: invalid predictions file: {exc}", file=sys.stderr)
        return EXIT_USER_ERROR
    if "confusion_matrix" in raw:
        cm = evalharness.ConfusionMatrix.from_dict(raw["confusion_matrix"])
    elif "predictions" in raw:
        if not args.manifest:
            print("error: --manifest is required to score raw predictions", file=sys.stderr)
            return EXIT_USER_ERROR
        try:
            manifest = evalharness.BenchmarkManifest.from_file(args.manifest)
            predictions = {pid: Judgment(v) for pid, v in raw["predictions"].items()}
            cm = evalharness.score(predictions, manifest)
        except (OSError, json.JSONDecodeError, KeyError, ValueError, MissingPrediction) as exc:
            print(f"error: cannot score predictions: {exc}", file=sys.stderr)
            return EXIT_USER_ERROR
    else:
        print("error: predictions file needs 'confusion_matrix' or 'predictions'", file=sys.stderr)
        return EXIT_USER_ERROR
    result = {"confusion_matrix": cm.to_dict(), "metrics": evalharness.metrics(cm)}
    (out_dir / "metrics.json").write_text(
        json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"tp={cm.tp} fp={cm.fp} tn={cm.tn} fn={cm.fn}")
    print(_format_metrics(result["metrics"]))
    return EXIT_OK


def _format_metrics(m: Mapping[str, float | None]) -> str:
    def fmt(value: float | None) -> str:
        return "n/a" if value is None else f"{value:.3f}"

    return (
        f"precision={fmt(m['precision'])} recall={fmt(m['recall'])}"
        f" accuracy={fmt(m['accuracy'])} f1={fmt(m['f1'])}"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vulnreach",
        description=(
            "Decide whether a Java source tree is actually impacted by a "
            "known-vulnerable library API."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_index = sub.add_parser("index", help="segment and embed a project into an index file")
    p_index.add_argument("--project", required=True, help="project root directory")
    p_index.add_argument("--out", required=True, help="index file to write")
    p_index.add_argument("--theta", type=int, default=None, help="max block size in tokens")
    p_index.add_argument("--encoder", default=None, help="encoder provider name")
    p_index.add_argument("--config", default=None, help="JSON config file")
    p_index.set_defaults(func=cmd_index)

    p_analyze = sub.add_parser("analyze", help="analyze an indexed project for one vulnerability")
    p_analyze.add_argument("--index", required=True, help="index file from `index`")
    p_analyze.add_argument("--vuln", required=True, help="vulnerability spec JSON file")
    p_analyze.add_argument("--config", default=None, help="JSON config file")
    p_analyze.add_argument("--report", required=True, help="verdict report JSON to write")
    p_analyze.add_argument("--project-id", default="project", help="project id for the report")
    p_analyze.add_argument(
        "--transcript", default=None, help="replay a recorded transcript instead of calling a provider"
    )
    p_analyze.add_argument("--theta", type=int, default=None, help=argparse.SUPPRESS)
    p_analyze.add_argument("--tau", type=float, default=None, help="similarity threshold")
    p_analyze.set_defaults(func=cmd_analyze)

    p_eval = sub.add_parser("evaluate", help="run the benchmark harness over a manifest")
    p_eval.add_argument("--manifest", default=None, help="benchmark manifest JSON")
    p_eval.add_argument("--config", default=None, help="JSON config file")
    p_eval.add_argument("--out", required=True, help="output directory for reports")
    p_eval.add_argument(
        "--sweep-theta", action="store_true", help="run one report per segment-size setting"
    )
    p_eval.add_argument(
        "--from-predictions",
        default=None,
        help="score a predictions/confusion-matrix JSON file instead of running the pipeline",
    )
    p_eval.add_argument("--theta", type=int, default=None, help="max block size in tokens")
    p_eval.add_argument("--tau", type=float, default=None, help="similarity threshold")
    p_eval.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "evaluate" and not args.manifest and not args.from_predictions:
        print("error: evaluate needs --manifest or --from-predictions", file=sys.stderr)
        return EXIT_USER_ERROR
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER_ERROR
    except ProviderError as exc:
        print(f"error: provider failure: {exc}", file=sys.stderr)
        return EXIT_PROVIDER_ERROR
    except VulnReachError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER_ERROR


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
