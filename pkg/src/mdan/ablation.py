"""The 3 x 3 grid of training strategies and attention modules."""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .data import Dataset
from .evaluation import evaluate
from .network import Domain, NetworkConfig, build_network
from .training import TrainConfig, train_ablation

log = logging.getLogger(__name__)

GRID_STRATEGIES = ("joint", "shared-vs-specific", "ours")
GRID_ATTENTION = ((True, False), (False, True), (True, True))  # (adapter, SE)
STRATEGY_LABELS = {"joint": "sh+s+t", "shared-vs-specific": "sh,s+t", "ours": "sh+s,t"}


@dataclass
class AblationRow:
    strategy: str
    adapter: bool
    se: bool
    per_class: np.ndarray
    average: float

    def format(self) -> str:
        marks = f"adapter={'y' if self.adapter else '-'} se={'y' if self.se else '-'}"
        accs = " ".join(f"{v:6.2f}" for v in self.per_class)
        return f"{STRATEGY_LABELS[self.strategy]:>8}  {marks}  {accs}  avg={self.average:6.2f}"


def run_ablation_grid(data: Dataset, cfg: TrainConfig, net_cfg: NetworkConfig,
                      out_dir: Optional[Path] = None) -> list[AblationRow]:
    """Train every cell from the same seed and score target test accuracy via the target path."""
    D_s = data.select("source", "train")
    D_t = data.select("target", "train").without_labels()
    test_t = data.select("target", "test")
    rows = []
    for strategy in GRID_STRATEGIES:
        for adapter, se in GRID_ATTENTION:
            ncfg = dataclasses.replace(net_cfg, use_adapter=adapter, use_se=se)
            tcfg = dataclasses.replace(cfg, strategy=strategy, use_adapter=adapter, use_se=se)
            net = build_network(ncfg, tcfg.seed)
            net, _ = train_ablation(net, D_s, D_t, tcfg)
            rep = evaluate(net, test_t, Domain.TARGET)
            row = AblationRow(strategy, adapter, se, rep.per_class, rep.macro)
            log.info("%s", row.format())
            rows.append(row)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_table(rows, out_dir / "ablation.csv", data.class_names or None)
    return rows


def write_table(rows: list[AblationRow], path: Path, class_names: Optional[list] = None) -> None:
    k = len(rows[0].per_class)
    names = class_names or [f"class{i}" for i in range(k)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "adapter", "se", *names, "average"])
        for r in rows:
            w.writerow([STRATEGY_LABELS[r.strategy], int(r.adapter), int(r.se),
                        *(repr(float(v)) for v in r.per_class), repr(float(r.average))])
