"""Command-line surface: train, eval, compare-scaling, gradcheck, cost,
synth, and mask-demo subcommands."""

from __future__ import annotations

import argparse
import json
import sys

from . import bufferio, harness
from .contrast import gradcheck_embeddings
from .core import ValidationError
from .costmodel import (
    REFERENCE_SCALING_ROWS,
    CostConfig,
    ScalingRow,
    efficiency_ratio,
    fit_scaling,
    iteration_cost,
)
from .datagen import (
    HttpProvider,
    MockProvider,
    ProviderConfig,
    provider_config_from_file,
    run_pipeline,
    validate_corpus,
)
from .template import (
    ChatMarkup,
    PromptConfig,
    TemplateVariant,
    build_adapted_pair,
    load_keyvalue_config,
    markup_from_config,
    mask_words,
    prompts_from_config,
)


def _load_flat_toml(path: str) -> dict:
    """Minimal flat-TOML reader (scalar `key = value` lines only); the
    runtime has no TOML parser available."""
    out: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line or line.startswith("["):
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if value.startswith('"') and value.endswith('"'):
                out[key] = value[1:-1]
            elif value in ("true", "false"):
                out[key] = value == "true"
            else:
                try:
                    out[key] = int(value)
                except ValueError:
                    out[key] = float(value)
    return out


def _train_config_from_file(path: str) -> harness.TrainConfig:
    kv = _load_flat_toml(path)
    kwargs = {}
    for f in harness.TrainConfig.__dataclass_fields__:
        if f in kv:
            kwargs[f] = kv[f]
    if "optimizer" in kwargs:
        kwargs["optimizer"] = harness.OptimizerKind(kwargs["optimizer"])
    if "attention_mode" in kwargs:
        kwargs["attention_mode"] = harness.AttentionMode(kwargs["attention_mode"])
    if "loss_variant" in kwargs:
        kwargs["loss_variant"] = harness.LossVariant(kwargs["loss_variant"])
    if "template_variant" in kwargs:
        kwargs["template_variant"] = TemplateVariant(kwargs["template_variant"])
    return harness.TrainConfig(**kwargs)


def _cmd_train(args) -> int:
    cfg = _train_config_from_file(args.config)
    corpus = harness.load_corpus_jsonl(args.corpus, image_tokens=args.image_tokens)
    state, losses = harness.train(corpus, cfg)
    if args.ckpt:
        bufferio.save_checkpoint(args.ckpt, state)
    out = open(args.losses, "w") if args.losses else sys.stdout
    try:
        out.write("step,loss\n")
        for step, loss in enumerate(losses):
            out.write(f"{step},{loss:.10g}\n")
    finally:
        if args.losses:
            out.close()
    return 0


def _cmd_eval(args) -> int:
    state = bufferio.load_checkpoint(args.ckpt)
    pairs = harness.load_eval_pairs_jsonl(args.pairs)
    report = harness.evaluate(state, pairs)
    print(
        json.dumps(
            {
                "precision_at_1": report.precision_at_1,
                "recall_at_k": {str(k): v for k, v in report.recall_at_k.items()},
                "candidates": report.candidates,
                "queries": report.queries,
            }
        )
    )
    return 0


def _cmd_compare_scaling(args) -> int:
    cfg = _train_config_from_file(args.config)
    corpus, eval_set = harness.make_separable_corpus(
        n_images=args.images, pairs_per_image=max(cfg.turns_per_image, 2), seed=cfg.seed
    )
    report = harness.compare_scaling(corpus, eval_set, cfg)
    print(json.dumps(report))
    return 0


def _cmd_gradcheck(args) -> int:
    report = gradcheck_embeddings(
        dim=args.dim, images=args.images, turns=args.turns, seed=args.seed, tol=args.tol
    )
    print(json.dumps(report))
    return 0 if report["passed"] else 1


def _read_scaling_csv(path: str) -> list[ScalingRow]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("turns"):
                continue
            turns, batch, pflops = line.split(",")
            rows.append(ScalingRow(int(turns), int(batch), float(pflops)))
    return rows


def _cmd_cost(args) -> int:
    if args.fit_scaling:
        rows = _read_scaling_csv(args.fit_scaling)
        fit = fit_scaling(rows)
        cfg = fit.config
        extra = {"max_relative_residual": fit.max_relative_residual}
    else:
        cfg = CostConfig()
        extra = {}
    pflops = iteration_cost(cfg, args.batch, args.turns) / 1e15
    print(
        json.dumps(
            {
                "pflops": pflops,
                "effective_batch": args.batch * args.turns,
                "ratio": efficiency_ratio(cfg, args.batch, args.turns),
                **extra,
            }
        )
    )
    return 0


def _cmd_synth(args) -> int:
    cfg = (
        provider_config_from_file(args.provider)
        if args.provider
        else ProviderConfig()
    )
    provider = MockProvider() if args.mock else HttpProvider(cfg)
    stats = run_pipeline(
        args.infile, args.out, provider, cfg, concurrency=args.concurrency
    )
    stats["corpus"] = validate_corpus(args.out)
    print(json.dumps(stats))
    return 0


def _cmd_mask_demo(args) -> int:
    markup = ChatMarkup()
    prompt_cfg = PromptConfig(
        mask_ratio=args.mask_ratio,
        template_variant=TemplateVariant(args.template_variant),
    )
    if args.config:
        kv = load_keyvalue_config(args.config)
        markup = markup_from_config(kv)
        base = prompts_from_config(kv)
        prompt_cfg = PromptConfig(
            pi1=base.pi1,
            pi2=base.pi2,
            plain_request=base.plain_request,
            mask_ratio=args.mask_ratio,
            template_variant=TemplateVariant(args.template_variant),
        )
    if args.target is not None:
        adapted = build_adapted_pair(
            args.text, args.target, prompt_cfg, markup, args.seed
        )
        print(
            json.dumps(
                {
                    "query_initial": adapted.query_initial,
                    "query_subsequent": adapted.query_subsequent,
                    "target_initial": adapted.target_initial,
                    "target_subsequent": adapted.target_subsequent,
                }
            )
        )
    else:
        print(mask_words(args.text, args.mask_ratio, args.seed, markup.mask_token))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multiturn",
        description="Multi-turn contrastive learning engine (desk scale)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the toy encoder on a JSONL corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", required=True, help="flat TOML train config")
    p.add_argument("--ckpt", help="write trained checkpoint here")
    p.add_argument("--losses", help="write step,loss CSV here (default stdout)")
    p.add_argument("--image-tokens", type=int, default=4)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="rank eval pairs with a trained checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pairs", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser(
        "compare-scaling", help="multi-turn vs single-turn precision and FLOPs"
    )
    p.add_argument("--config", required=True)
    p.add_argument("--images", type=int, default=32)
    p.set_defaults(func=_cmd_compare_scaling)

    p = sub.add_parser("gradcheck", help="finite-difference check of loss gradients")
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--images", type=int, default=3)
    p.add_argument("--turns", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("cost", help="iteration FLOPs and efficiency ratio")
    p.add_argument("--batch", type=int, required=True)
    p.add_argument("--turns", type=int, required=True)
    p.add_argument(
        "--fit-scaling",
        metavar="CSV",
        help="fit coefficients to a turns,batch,pflops CSV first",
    )
    p.set_defaults(func=_cmd_cost)

    p = sub.add_parser("synth", help="run the caption + pair synthesis pipeline")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--provider", help="provider key=value config file")
    p.add_argument("--concurrency", type=int, default=1)
    p.add_argument("--mock", action="store_true")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("mask-demo", help="word masking / adapted-pair demo")
    p.add_argument("--text", required=True)
    p.add_argument("--target", help="build the full adapted pair against this text")
    p.add_argument("--mask-ratio", "--ratio", dest="mask_ratio", type=float, default=0.5)
    p.add_argument("--template-variant", default="reconstruction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="markup/prompt key=value config file")
    p.set_defaults(func=_cmd_mask_demo)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
