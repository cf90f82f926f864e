"""Accuracy reports, PCA feature projection and SE-weight exports."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .data import Dataset
from .network import Domain, Network, _as_input, classify, encode, residual_block, stem
from .pnm import write_pnm


@dataclass
class EvalReport:
    per_class: np.ndarray  # percent
    macro: float
    confusion: np.ndarray  # rows: true class, cols: predicted
    n: int
    class_names: Optional[list] = None

    def rows(self) -> list[tuple[str, float]]:
        names = self.class_names or [str(i) for i in range(len(self.per_class))]
        return list(zip(names, self.per_class.tolist())) + [("average", self.macro)]

    def format(self) -> str:
        return "  ".join(f"{k}={v:.2f}" for k, v in self.rows()) + f"  (n={self.n})"

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "accuracy"])
            for k, v in self.rows():
                w.writerow([k, repr(float(v))])


def predict_logits(net: Network, images: np.ndarray, domain, batch: int = 100) -> np.ndarray:
    out = []
    for i in range(0, len(images), batch):
        out.append(classify(net, encode(net, images[i:i + batch], domain)).data)
    return np.concatenate(out)


def predict(net: Network, images: np.ndarray, domain, batch: int = 100) -> np.ndarray:
    # np.argmax returns the first maximum: ties go to the lowest class index
    return np.argmax(predict_logits(net, images, domain, batch), axis=1)


def extract_features(net: Network, images: np.ndarray, domain, batch: int = 100) -> np.ndarray:
    return np.concatenate([encode(net, images[i:i + batch], domain).data
                           for i in range(0, len(images), batch)])


def report_from_predictions(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int,
                            class_names: Optional[list] = None) -> EvalReport:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)
    support = conf.sum(axis=1)
    present = support > 0
    per_class = np.where(present, 100.0 * np.diag(conf) / np.maximum(support, 1), np.nan)
    macro = float(np.mean(per_class[present]))
    return EvalReport(per_class, macro, conf, int(len(y_true)), class_names)


def evaluate(net: Network, data: Dataset, domain: Union[Domain, str]) -> EvalReport:
    """Top-1 accuracy per class and their unweighted mean."""
    if len(data) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    if not data.is_labeled:
        raise ValueError("evaluation needs labels for every sample")
    pred = predict(net, data.images, Domain(domain))
    return report_from_predictions(data.labels, pred, net.cfg.num_classes, data.class_names or None)


# ---------------------------------------------------------------- PCA


def top2_components(x: np.ndarray, tol: float = 1e-13, max_iter: int = 100000) -> tuple[np.ndarray, np.ndarray]:
    """Top two principal directions of the rows of ``x`` by block power iteration.

    Returns (components [2, D], variances [2]). The start block is fixed, so the
    result is deterministic; each direction is signed so that its largest
    absolute entry is positive.
    """
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / max(len(x) - 1, 1)
    d = cov.shape[0]
    scale = np.trace(cov)
    if scale <= 1e-300 or np.max(np.abs(xc)) == 0:
        raise ValueError("degenerate covariance: all feature vectors are equal")
    k = min(2, d)
    idx = np.arange(1, d + 1, dtype=np.float64)
    q = np.stack([np.ones(d) / idx, np.cos(idx)], axis=1)[:, :k]
    q, _ = np.linalg.qr(q)
    for _ in range(max_iter):
        q, _ = np.linalg.qr(cov @ q)
        # Rayleigh-Ritz inside the 2-D subspace orders and separates the pair
        small = q.T @ cov @ q
        evals, evecs = np.linalg.eigh(small)
        order = np.argsort(evals)[::-1]
        q = q @ evecs[:, order]
        # eigen-residual is linear in the angle error, unlike |cos| - 1
        resid = cov @ q - q * evals[order]
        if np.max(np.abs(resid)) <= tol * scale:
            break
    comps = q.T
    for i in range(k):
        j = np.argmax(np.abs(comps[i]))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    var = np.array([comps[i] @ cov @ comps[i] for i in range(k)])
    if k == 1:
        comps = np.vstack([comps, np.zeros(d)])
        var = np.append(var, 0.0)
    return comps, var


def project_2d(x: np.ndarray) -> np.ndarray:
    comps, _ = top2_components(x)
    return (x - x.mean(axis=0)) @ comps.T


def export_features_2d(net: Network, data: Dataset, domain: Union[Domain, str],
                       path: Union[str, Path]) -> np.ndarray:
    """Write id, label, domain, pc1, pc2 for every sample; returns the projection."""
    if len(data) < 3:
        raise ValueError("need at least 3 samples for a projection")
    feats = extract_features(net, data.images, Domain(domain))
    proj = project_2d(feats)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", "domain", "pc1", "pc2"])
        for i in range(len(data)):
            lab = int(data.labels[i])
            w.writerow([int(data.ids[i]), "" if lab < 0 else lab, str(data.domains[i]),
                        repr(float(proj[i, 0])), repr(float(proj[i, 1]))])
    return proj


# ---------------------------------------------------------------- attention maps


def block_attention(net: Network, image: np.ndarray, block: int, domain: Union[Domain, str]) -> tuple[np.ndarray, np.ndarray]:
    """(pre-SE feature maps [C, H, W], SE weights [C]) of residual block ``block``."""
    if not net.cfg.use_se:
        raise ValueError("network has no SE modules")
    blocks = net.cfg.block_names()
    if not 0 <= block < len(blocks):
        raise IndexError(f"block index {block} out of range [0, {len(blocks)})")
    domain = Domain(domain)
    x = _as_input(net, image[None] if image.ndim == 3 else image)
    h = stem(net, x)
    for i, (name, _, _, stride) in enumerate(blocks):
        trace = {} if i == block else None
        h = residual_block(net, h, name, stride, domain, trace)
        if trace is not None:
            return trace["pre_se"].data[0], trace["se_weights"].data[0]
    raise AssertionError("unreachable")


def _normalize(m: np.ndarray) -> np.ndarray:
    lo, hi = m.min(), m.max()
    return np.zeros_like(m) if hi - lo <= 0 else (m - lo) / (hi - lo)


def export_attention_maps(net: Network, image: np.ndarray, path: Union[str, Path],
                          block: int = 0, domain: Union[Domain, str] = Domain.TARGET) -> dict:
    """Write ``se_weights.csv`` plus the max- and min-weight feature maps as PGM images."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    fmap, s = block_attention(net, image, block, domain)
    hi, lo = int(np.argmax(s)), int(np.argmin(s))
    with open(path / "se_weights.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel", "weight"])
        for c, v in enumerate(s):
            w.writerow([c, repr(float(v))])
    write_pnm(path / "input.pgm", _normalize(image.mean(axis=0)))
    write_pnm(path / f"max_channel{hi:02d}.pgm", _normalize(fmap[hi]))
    write_pnm(path / f"min_channel{lo:02d}.pgm", _normalize(fmap[lo]))
    return {"weights": s, "argmax": hi, "argmin": lo}
