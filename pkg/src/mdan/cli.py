"""Command line entry point: ``python -m mdan <command> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, load_into, read_config

log = logging.getLogger("mdan")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _split_net_keys(values: dict) -> tuple[dict, dict]:
    net = {k[4:]: v for k, v in values.items() if k.startswith("net.")}
    rest = {k: v for k, v in values.items() if not k.startswith("net.")}
    return rest, net


def _load_train_config(path: str, seed: Optional[int]):
    from .network import NetworkConfig
    from .training import TrainConfig
    values, net_values = _split_net_keys(read_config(path))
    cfg = load_into(TrainConfig, values, path, seed=seed)
    net_cfg = load_into(NetworkConfig, net_values, path, use_adapter=cfg.use_adapter, use_se=cfg.use_se)
    return cfg, net_cfg


def _load_data(path: str, in_channels: int = 3):
    from .data import load_dataset
    return load_dataset(path, in_channels)


def cmd_gen_data(a) -> None:
    from .data import GenSpec, generate_dataset, save_dataset, Dataset
    spec = GenSpec() if a.spec == "default" else GenSpec.from_file(a.spec, seed=a.seed)
    if a.spec == "default" and a.seed is not None:
        spec.seed = a.seed
    src, tgt = generate_dataset(spec)
    save_dataset(Dataset.concat([src, tgt]), a.out)
    print(f"wrote {len(src)} source and {len(tgt)} target samples to {a.out}")


def cmd_train(a) -> None:
    from .data import Dataset
    from .network import build_network, save_checkpoint
    from .training import train_ablation
    cfg, net_cfg = _load_train_config(a.config, a.seed)
    data = _load_data(a.data, net_cfg.in_channels)
    net_cfg.num_classes = data.num_classes
    net = build_network(net_cfg, cfg.seed)
    D_s = data.select("source", "train")
    D_t = data.select("target", "train").without_labels()
    net, tlog = train_ablation(net, D_s, D_t, cfg, data.select("source", "val"), data.select("target", "val"))
    save_checkpoint(net, a.out)
    log_path = a.log or str(a.out) + ".log.csv"
    tlog.write_csv(log_path)
    print(f"trained {len(tlog.iterations)} iterations; checkpoint {a.out}, log {log_path}")


def cmd_selftrain(a) -> None:
    from .network import load_checkpoint, save_checkpoint
    from .selftrain import SelfTrainConfig, generate_pseudo_labels, pseudo_dataset, selftrain_finetune, write_audit
    cfg = SelfTrainConfig.from_file(a.config, seed=a.seed)
    net = load_checkpoint(a.checkpoint)
    data = _load_data(a.data, net.cfg.in_channels)
    D_t = data.select("target", "train").without_labels()
    pseudo, records = generate_pseudo_labels(net, D_t, cfg)
    audit = a.audit or str(a.out) + ".audit.csv"
    write_audit(records, audit)
    net, _ = selftrain_finetune(net, pseudo_dataset(D_t, pseudo), cfg)
    save_checkpoint(net, a.out)
    print(f"pseudo-labelled {len(pseudo)} of {len(D_t)} target samples; checkpoint {a.out}, audit {audit}")


def cmd_eval(a) -> None:
    from .evaluation import evaluate
    from .network import load_checkpoint
    net = load_checkpoint(a.checkpoint)
    data = _load_data(a.data, net.cfg.in_channels).select(a.domain, a.split)
    if len(data) == 0:
        raise RuntimeError(f"no {a.domain}/{a.split} samples in {a.data}")
    report = evaluate(net, data, a.path or a.domain)
    print(report.format())
    if a.out:
        report.write_csv(a.out)


def cmd_ablate(a) -> None:
    from .ablation import run_ablation_grid
    cfg, net_cfg = _load_train_config(a.config, a.seed)
    data = _load_data(a.data, net_cfg.in_channels)
    net_cfg.num_classes = data.num_classes
    rows = run_ablation_grid(data, cfg, net_cfg, Path(a.out))
    for r in rows:
        print(r.format())


def cmd_gradcheck(a) -> None:
    from .gradcheck import check_network_gradients
    report = check_network_gradients(seed=a.seed or 0, epsilon=a.epsilon)
    print(report)
    print(f"max relative error {report.max_rel_error:.3e}")
    if report.max_rel_error >= 1e-4:
        raise RuntimeError(f"gradient check failed: {report.max_rel_error:.3e} >= 1e-4")


def cmd_export_features(a) -> None:
    from .evaluation import export_features_2d
    from .network import load_checkpoint
    net = load_checkpoint(a.checkpoint)
    data = _load_data(a.data, net.cfg.in_channels).select(a.domain, a.split)
    export_features_2d(net, data, a.path or a.domain, a.out)
    print(f"wrote {len(data)} projected features to {a.out}")


def cmd_export_attention(a) -> None:
    import numpy as np
    from .evaluation import export_attention_maps
    from .network import load_checkpoint
    net = load_checkpoint(a.checkpoint)
    data = _load_data(a.data, net.cfg.in_channels)
    hits = np.flatnonzero(data.ids == a.sample_id)
    if not len(hits):
        raise RuntimeError(f"sample id {a.sample_id} not found in {a.data}")
    sample = data[int(hits[0])]
    info = export_attention_maps(net, sample.image, a.out, a.block, a.path or sample.domain)
    print(f"block {a.block}: max weight channel {info['argmax']}, min weight channel {info['argmin']}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mdan", description="Multi-domain attention network for RGB-to-thermal adaptation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=None, help="override the seed in the config")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("gen-data", cmd_gen_data, "generate the synthetic benchmark")
    sp.add_argument("spec", help="GenSpec key=value file, or 'default'")
    sp.add_argument("out")

    sp = add("train", cmd_train, "train a network (strategy from the config)")
    sp.add_argument("config")
    sp.add_argument("data")
    sp.add_argument("out")
    sp.add_argument("--log", default=None)

    sp = add("selftrain", cmd_selftrain, "pseudo-label target data and fine-tune target attention")
    sp.add_argument("config")
    sp.add_argument("checkpoint")
    sp.add_argument("data")
    sp.add_argument("out")
    sp.add_argument("--audit", default=None)

    for name, fn, help_ in (("eval", cmd_eval, "per-class and macro accuracy"),
                            ("export-features", cmd_export_features, "PCA projection of pooled features")):
        sp = add(name, fn, help_)
        sp.add_argument("checkpoint")
        sp.add_argument("data")
        if name == "export-features":
            sp.add_argument("out")
        else:
            sp.add_argument("--out", default=None, help="write the report as CSV")
        sp.add_argument("--domain", choices=("source", "target"), default="target")
        sp.add_argument("--split", choices=("train", "val", "test"), default="test")
        sp.add_argument("--path", choices=("source", "target"), default=None,
                        help="attention path to use (default: same as --domain)")

    sp = add("ablate", cmd_ablate, "run the 3 strategies x 3 attention settings grid")
    sp.add_argument("config")
    sp.add_argument("data")
    sp.add_argument("out")

    sp = add("gradcheck", cmd_gradcheck, "finite-difference check of the tiny network")
    sp.add_argument("--epsilon", type=float, default=1e-5)

    sp = add("export-attention", cmd_export_attention, "SE weights and extreme feature maps for one sample")
    sp.add_argument("checkpoint")
    sp.add_argument("data")
    sp.add_argument("out")
    sp.add_argument("--sample-id", type=int, required=True)
    sp.add_argument("--block", type=int, default=0)
    sp.add_argument("--path", choices=("source", "target"), default=None)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "fn", None):
            raise UsageError(parser.format_usage())
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except ConfigError as exc:
        print(f"mdan: config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit code 2
        print(f"mdan: error: {exc}", file=sys.stderr)
        return 2
    return 0


cli_main = main
