"""Command-line interface: gen / pretrain / augment / train / eval /
verify / curves."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bridge import pretrain_bridge_generator
from .dataset import read_dataset, write_dataset
from .errors import XtrapError
from .extract import pretrain_extractor
from .featx import FeatXParams
from .gsplice import SpliceConfig, run_gsplice
from .harness import ALL_SUITES, RunConfig, backbone_config, train, verify
from .metrics import MetricReport, emit_curves, evaluate
from .nn.gnn import GNNConfig
from .nn.params import ParamStore
from .synth import GenConfig, generate

_KINDS = ("GIN", "GCN")
_POOLS = ("mean", "none")


def save_backbone(params: ParamStore, cfg: GNNConfig, p: int, path) -> Path:
    """Checkpoint the classifier with enough config to rebuild it."""
    out = params.copy()
    meta = {
        "bb.kind": _KINDS.index(cfg.kind),
        "bb.num_layers": cfg.num_layers,
        "bb.hidden_dim": cfg.hidden_dim,
        "bb.num_classes": cfg.num_classes,
        "bb.pooling": _POOLS.index(cfg.pooling),
        "bb.dropout": cfg.dropout,
        "bb.degree_onehot": int(cfg.degree_onehot),
        "bb.p": p,
    }
    for name, value in meta.items():
        if name not in out:
            out.add(name, np.asarray(float(value)))
    return out.save(path)


def load_backbone(path) -> tuple[ParamStore, GNNConfig]:
    params = ParamStore.load(path)
    cfg = GNNConfig(
        kind=_KINDS[int(params["bb.kind"])],
        num_layers=int(params["bb.num_layers"]),
        hidden_dim=int(params["bb.hidden_dim"]),
        num_classes=int(params["bb.num_classes"]),
        pooling=_POOLS[int(params["bb.pooling"])],
        dropout=float(params["bb.dropout"]),
        degree_onehot=bool(int(params["bb.degree_onehot"])),
    )
    return params, cfg


def _add_gen(sub):
    p = sub.add_parser("gen", help="generate a synthetic benchmark bundle")
    p.add_argument("--task", required=True,
                   choices=["motif-size", "motif-base", "color-graph", "cbas-node"])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=None,
                   help="training-split sample count (others scale)")


def _add_pretrain(sub):
    p = sub.add_parser("pretrain", help="pretrain bridge generator or extractor")
    what = p.add_subparsers(dest="what", required=True)
    b = what.add_parser("bridge")
    b.add_argument("--data", required=True)
    b.add_argument("--alpha", type=float, default=1.0)
    b.add_argument("--beta", type=float, default=0.5)
    b.add_argument("--epochs", type=int, default=30)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.add_argument("--extractor", default=None,
                   help="causal extractor checkpoint for meta-free data")
    e = what.add_parser("extractor")
    e.add_argument("--kind", required=True, choices=["causal", "env"])
    e.add_argument("--data", required=True)
    e.add_argument("--epochs", type=int, default=60)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--rho", type=float, default=None)
    e.add_argument("--out", required=True)


def _add_augment(sub):
    p = sub.add_parser("augment", help="materialize a G-Splice augmented bundle")
    p.add_argument("--data", required=True)
    p.add_argument("--options", default="101",
                   help="3-bit selection over options 1/2/3, e.g. 101")
    p.add_argument("--f", type=int, default=2, choices=[2, 3, 4])
    p.add_argument("--pct", type=float, default=1.0)
    p.add_argument("--bridge", default="vae", choices=["vae", "random"])
    p.add_argument("--domain", default="size", choices=["size", "base"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--causal", default=None)
    p.add_argument("--env", default=None)
    p.add_argument("--bridge-ckpt", default=None)


def _add_train(sub):
    p = sub.add_parser("train", help="train a method and emit report/curves/ckpt")
    p.add_argument("--data", required=True)
    p.add_argument("--method", default="erm",
                   choices=["erm", "gsplice", "gsplice-r", "featx"])
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--gamma", type=float, default=10.0)
    p.add_argument("--gamma-a", type=float, default=2.0)
    p.add_argument("--gamma-b", type=float, default=1.0)
    p.add_argument("--pct", type=float, default=None)
    p.add_argument("--options", default="101")
    p.add_argument("--f", type=int, default=2)
    p.add_argument("--bridge", default="vae", choices=["vae", "random"])
    p.add_argument("--domain", default="size", choices=["size", "base"])
    p.add_argument("--causal", default=None)
    p.add_argument("--env", default=None)
    p.add_argument("--bridge-ckpt", default=None)
    p.add_argument("--augmented", default=None,
                   help="pre-materialized augmented bundle (skips run_gsplice)")
    p.add_argument("--out", required=True)


def _add_eval(sub):
    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="ood_test")


def _add_verify(sub):
    p = sub.add_parser("verify", help="run oracle verification suites")
    p.add_argument("--suite", default="all",
                   choices=["all", *ALL_SUITES])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data", default=None, help="bundle for thm31/thm32")
    p.add_argument("--augmented", default=None,
                   help="augmented bundle for thm31/thm32")


def _add_curves(sub):
    p = sub.add_parser("curves", help="emit the per-epoch CSV from a report")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)


def _parse_options(bits: str) -> tuple:
    if len(bits) == 3 and set(bits) <= {"0", "1"}:
        opts = tuple(i + 1 for i, c in enumerate(bits) if c == "1")
    else:
        opts = tuple(int(c) for c in bits.replace(",", ""))
    return opts


def _cmd_gen(args) -> int:
    counts = {}
    if args.n is not None:
        counts = {"train": args.n, "id_val": max(args.n // 5, 5),
                  "id_test": max(args.n // 5, 5), "ood_val": max(args.n // 5, 5),
                  "ood_test": max(args.n // 5, 5)}
    cfg = GenConfig(task=args.task, seed=args.seed, samples_per_split=counts)
    path = write_dataset(generate(cfg), Path(args.out))
    print(f"wrote {path}")
    return 0


def _cmd_pretrain(args) -> int:
    bundle = read_dataset(args.data)
    rng = np.random.default_rng(args.seed)
    if args.what == "bridge":
        extractor = ParamStore.load(args.extractor) if args.extractor else None
        params, curve = pretrain_bridge_generator(
            bundle, extractor_params=extractor, alpha=args.alpha, beta=args.beta,
            epochs=args.epochs, rng=rng)
        path = params.save(args.out)
        print(f"wrote {path} (loss {curve[0]:.4g} -> {curve[-1]:.4g})")
    else:
        kind = "causal" if args.kind == "causal" else "environmental"
        params, curve = pretrain_extractor(bundle, kind, epochs=args.epochs,
                                           rng=rng, rho=args.rho)
        path = params.save(args.out)
        print(f"wrote {path} (loss {curve[0]:.4g} -> {curve[-1]:.4g})")
    return 0


def _checkpoints_from_args(args) -> dict:
    ckpts = {}
    if getattr(args, "causal", None):
        ckpts["causal"] = ParamStore.load(args.causal)
    if getattr(args, "env", None):
        ckpts["env"] = ParamStore.load(args.env)
    if getattr(args, "bridge_ckpt", None):
        ckpts["bridge"] = ParamStore.load(args.bridge_ckpt)
    return ckpts


def _cmd_augment(args) -> int:
    bundle = read_dataset(args.data)
    cfg = SpliceConfig(options=_parse_options(args.options), f=args.f,
                       pct=args.pct, bridge_mode=args.bridge,
                       shift_domain=args.domain)
    augmented = run_gsplice(bundle, cfg, _checkpoints_from_args(args), args.seed)
    path = write_dataset(augmented, Path(args.out))
    print(f"wrote {path} (+{len(augmented.train) - len(bundle.train)} samples)")
    return 0


def _cmd_train(args) -> int:
    bundle = read_dataset(args.data)
    splice_cfg = None
    featx_cfg = None
    if args.method in ("gsplice", "gsplice-r"):
        splice_cfg = SpliceConfig(options=_parse_options(args.options), f=args.f,
                                  pct=args.pct if args.pct is not None else 1.0,
                                  bridge_mode=args.bridge, shift_domain=args.domain,
                                  gamma=args.gamma)
    if args.method == "featx":
        featx_cfg = FeatXParams(domain=bundle.domain, a=args.gamma_a, b=args.gamma_b,
                                pct=args.pct if args.pct is not None else 0.8)
    cfg = RunConfig(method=args.method, epochs=args.epochs, seed=args.seed,
                    lr=args.lr, batch_size=args.batch_size, hidden_dim=args.hidden,
                    num_layers=args.layers, weight_decay=args.weight_decay,
                    gamma=args.gamma, splice=splice_cfg, featx=featx_cfg)
    checkpoints = _checkpoints_from_args(args)
    if args.augmented:
        checkpoints["augmented"] = read_dataset(args.augmented)
    params, report, extras = train(bundle, cfg, checkpoints or None)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    report.save(outdir / "report.json")
    emit_curves(report, outdir / "curves.csv")
    save_backbone(params, backbone_config(bundle, cfg), bundle.p,
                  outdir / "ckpt.bin")
    print(json.dumps({"id_id": report.id_id, "ood_ood": report.ood_ood,
                      "selected_epoch": report.selected_epoch}, sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    bundle = read_dataset(args.data)
    params, cfg = load_backbone(args.ckpt)
    acc = evaluate(params, cfg, bundle, args.split)
    print(json.dumps({"split": args.split, "accuracy": acc}, sort_keys=True))
    return 0


def _cmd_verify(args) -> int:
    bundle = read_dataset(args.data) if args.data else None
    augmented = read_dataset(args.augmented) if args.augmented else None
    suites = list(ALL_SUITES) if args.suite == "all" else [args.suite]
    any_failed = False
    for suite in suites:
        result = verify(suite, bundle=bundle, augmented=augmented, seed=args.seed)
        status = "PASS" if result.get("passed") else "FAIL"
        any_failed |= not result.get("passed")
        detail = {k: v for k, v in result.items() if k != "passed"}
        print(f"{suite}: {status} {json.dumps(detail, sort_keys=True, default=str)}")
    return 1 if any_failed else 0


def _cmd_curves(args) -> int:
    report = MetricReport.load(args.report)
    path = emit_curves(report, Path(args.out))
    print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="xtrap",
        description="Graph OOD augmentation by structure/feature extrapolation")
    sub = parser.add_subparsers(dest="cmd", required=True)
    for add in (_add_gen, _add_pretrain, _add_augment, _add_train, _add_eval,
                _add_verify, _add_curves):
        add(sub)
    args = parser.parse_args(argv)
    handlers = {
        "gen": _cmd_gen, "pretrain": _cmd_pretrain, "augment": _cmd_augment,
        "train": _cmd_train, "eval": _cmd_eval, "verify": _cmd_verify,
        "curves": _cmd_curves,
    }
    try:
        return handlers[args.cmd](args)
    except XtrapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
