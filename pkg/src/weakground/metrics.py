"""R@n, IoU@m evaluation with Unique / Multiple splits."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import iou_matrix

SPLITS = ("unique", "multiple", "overall")
DEFAULT_CELLS = ((1, 0.25), (1, 0.5), (3, 0.25), (3, 0.5))
CSV_COLUMNS = ("method", "split", "n", "m", "recall", "num_queries", "seed", "config_hash")


@dataclass
class EvalQuery:
    scene_index: int
    sentence_index: int
    proposal_boxes: np.ndarray   # (M, 6)
    gt_box: np.ndarray           # (6,)
    split: str


def collect_queries(corpus) -> list[EvalQuery]:
    out = []
    for si, rec in enumerate(corpus):
        for qi, sent in enumerate(rec.sentences):
            gt = rec.scene.object_by_id(sent.target_object_id).box.to_array()
            out.append(EvalQuery(si, qi, rec.proposals.boxes, gt, sent.split))
    return out


def top_n_ious(pred_boxes: np.ndarray, gt_box: np.ndarray, n: int) -> np.ndarray:
    pred_boxes = np.asarray(pred_boxes, dtype=np.float64).reshape(-1, 6)
    if len(pred_boxes) < n:
        raise ValueError(f"query has {len(pred_boxes)} ranked predictions, needs {n}")
    return iou_matrix(pred_boxes[:n], np.asarray(gt_box).reshape(1, 6))[:, 0]


def recall_at(predictions: Sequence[np.ndarray], gts: Sequence[np.ndarray], n: int, m: float) -> float:
    """Percentage of queries whose top-``n`` predictions include a box with IoU > ``m``.

    ``predictions[q]`` holds ranked boxes ``(>=n, 6)`` for query ``q``.
    """
    if len(predictions) != len(gts):
        raise ValueError("one prediction list per ground-truth box required")
    if len(gts) == 0:
        raise ValueError("no queries to evaluate")
    hits = sum(bool(top_n_ious(p, g, n).max() > m) for p, g in zip(predictions, gts))
    return 100.0 * hits / len(gts)


@dataclass
class MetricsReport:
    rows: list[dict] = field(default_factory=list)

    def add_method(self, method: str, queries: Sequence[EvalQuery], rankings: Sequence[Sequence[int]],
                   cells: Iterable[tuple[int, float]] = DEFAULT_CELLS, seed: int = 0,
                   config_hash: str = "") -> None:
        """Append recall rows for every split and cell given one ranking per query."""
        if len(queries) != len(rankings):
            raise ValueError("missing predictions for some queries")
        cells = list(cells)
        max_n = max(n for n, _ in cells)
        best_ious = [top_n_ious(q.proposal_boxes[np.asarray(r[:max_n])], q.gt_box, min(max_n, len(r)))
                     for q, r in zip(queries, rankings)]
        for split in SPLITS:
            sel = [i for i, q in enumerate(queries) if split == "overall" or q.split == split]
            for n, m in cells:
                if sel:
                    hits = sum(bool(best_ious[i][:n].max() > m) for i in sel)
                    recall = 100.0 * hits / len(sel)
                else:
                    recall = 0.0
                self.rows.append({"method": method, "split": split, "n": n, "m": m,
                                  "recall": recall, "num_queries": len(sel), "seed": seed,
                                  "config_hash": config_hash})

    def get(self, method: str, split: str, n: int, m: float) -> float:
        for r in self.rows:
            if r["method"] == method and r["split"] == split and r["n"] == n and r["m"] == m:
                return r["recall"]
        raise KeyError((method, split, n, m))

    def methods(self) -> list[str]:
        return list(dict.fromkeys(r["method"] for r in self.rows))

    def check_invariants(self) -> list[str]:
        """Violations of recall monotonicity, the upper-bound ceiling and split accounting."""
        problems = []
        idx = {(r["method"], r["split"], r["n"], r["m"]): r for r in self.rows}
        for (meth, split, n, m), r in idx.items():
            if not 0.0 <= r["recall"] <= 100.0:
                problems.append(f"{meth}/{split} R@{n},{m} outside [0, 100]")
            for (meth2, split2, n2, m2), r2 in idx.items():
                if (meth2, split2) != (meth, split):
                    continue
                if n2 >= n and m2 <= m and r2["recall"] < r["recall"]:
                    problems.append(f"{meth}/{split}: R@{n2},{m2} < R@{n},{m}")
            ub = idx.get(("upper_bound", split, n, m))
            if ub is not None and r["recall"] > ub["recall"] + 1e-9:
                problems.append(f"{meth}/{split} R@{n},{m} exceeds upper bound")
            if split == "overall":
                parts = [idx.get((meth, s, n, m)) for s in ("unique", "multiple")]
                if all(p is not None for p in parts):
                    total = sum(p["num_queries"] for p in parts)
                    if total != r["num_queries"]:
                        problems.append(f"{meth}: split counts do not add up")
                    elif total:
                        weighted = sum(p["recall"] * p["num_queries"] for p in parts) / total
                        if abs(weighted - r["recall"]) > 1e-9:
                            problems.append(f"{meth} R@{n},{m}: overall != weighted splits")
        return problems

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in self.rows:
            writer.writerow({**r, "recall": f"{r['recall']:.6f}"})
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def oracle_rankings(queries: Sequence[EvalQuery]) -> list[list[int]]:
    """Rank proposals by IoU with the target (best first, lower index on ties)."""
    out = []
    for q in queries:
        ious = iou_matrix(q.proposal_boxes, q.gt_box[None])[:, 0]
        out.append(np.argsort(-ious, kind="stable").tolist())
    return out


def upper_bound_row(queries: Sequence[EvalQuery], cells=DEFAULT_CELLS, seed: int = 0,
                    config_hash: str = "") -> MetricsReport:
    report = MetricsReport()
    report.add_method("upper_bound", queries, oracle_rankings(queries), cells, seed, config_hash)
    return report
