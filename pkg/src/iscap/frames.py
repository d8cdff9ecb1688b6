"""Frame records, dataset I/O, ground-truth/prediction matching, partitioning.

The native dataset format is JSON lines, one frame per line::

    {"frame_id": "000001", "ego_speed": 8.3,
     "gt":   [{"class": "car", "x": 12.0, "y": 0.2, "l": 4.2, "w": 1.8, "yaw": 0.0}],
     "pred": [{"class": "car", "x": 12.3, "y": 0.1, "l": 4.0, "w": 1.7, "yaw": 0.0, "score": 0.91}]}

Boxes live in the ego frame (x forward, y left, metres) on the ground
plane.  An optional ``"occluded": true`` marks ground-truth boxes.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from . import dsl

log = logging.getLogger(__name__)

OBJECT_CLASSES = ("car", "pedestrian", "cyclist", "other")

KITTI_CLASS_MAP = {
    "Car": "car",
    "Van": "car",
    "Pedestrian": "pedestrian",
    "Person_sitting": "pedestrian",
    "Cyclist": "cyclist",
    "Truck": "other",
    "Tram": "other",
    "Misc": "other",
}


class DatasetError(ValueError):
    pass


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectBox:
    cls: str
    x: float
    y: float
    l: float
    w: float
    yaw: float = 0.0
    score: Optional[float] = None
    occluded: bool = False

    def envelope(self) -> tuple:
        """Axis-aligned ground-plane extent ``(xmin, ymin, xmax, ymax)``."""
        c, s = abs(math.cos(self.yaw)), abs(math.sin(self.yaw))
        hx = 0.5 * (self.l * c + self.w * s)
        hy = 0.5 * (self.l * s + self.w * c)
        return (self.x - hx, self.y - hy, self.x + hx, self.y + hy)


@dataclass(frozen=True)
class FrameRecord:
    frame_id: str
    ego_speed: float
    objects_gt: tuple = ()
    objects_pred: tuple = ()
    # index into objects_pred per ground-truth object, None if unmatched
    match_table: Optional[tuple] = None


def bev_iou(a: ObjectBox, b: ObjectBox) -> float:
    ax0, ay0, ax1, ay1 = a.envelope()
    bx0, by0, bx1, by1 = b.envelope()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def match(frame: FrameRecord, iou_threshold: float = 0.5) -> FrameRecord:
    """Greedy one-to-one matching, highest IoU first, same class only.

    Ties go to the lower prediction index, then the lower ground-truth
    index.  Pairs below ``iou_threshold`` never match.
    """
    pairs = []
    for gi, g in enumerate(frame.objects_gt):
        for pi, p in enumerate(frame.objects_pred):
            if g.cls != p.cls:
                continue
            iou = bev_iou(g, p)
            if iou >= iou_threshold and iou > 0.0:
                pairs.append((-iou, pi, gi))
    pairs.sort()
    table = [None] * len(frame.objects_gt)
    used = set()
    for _, pi, gi in pairs:
        if table[gi] is None and pi not in used:
            table[gi] = pi
            used.add(pi)
    return replace(frame, match_table=tuple(table))


def match_all(frames: Iterable[FrameRecord], iou_threshold: float = 0.5) -> list:
    return [match(f, iou_threshold) for f in frames]


# ------------------------------------------------------------------ I/O


def _box_from_json(d: dict, fid: str, where: str) -> ObjectBox:
    if not isinstance(d, dict):
        raise DatasetError(f"frame {fid}: {where} entries must be objects")
    missing = [k for k in ("class", "x", "y", "l", "w") if k not in d]
    if missing:
        raise DatasetError(f"frame {fid}: {where} box missing field {missing[0]!r}")
    cls = d["class"]
    if cls not in OBJECT_CLASSES:
        raise DatasetError(f"frame {fid}: unknown object class {cls!r}")
    box = ObjectBox(
        cls=cls, x=float(d["x"]), y=float(d["y"]), l=float(d["l"]), w=float(d["w"]),
        yaw=float(d.get("yaw", 0.0)),
        score=None if d.get("score") is None else float(d["score"]),
        occluded=bool(d.get("occluded", False)),
    )
    if box.l <= 0 or box.w <= 0:
        raise DatasetError(f"frame {fid}: box size must be positive")
    if box.score is not None and not 0.0 <= box.score <= 1.0:
        raise DatasetError(f"frame {fid}: score must be in [0, 1]")
    return box


def _box_to_json(b: ObjectBox) -> dict:
    d = {"class": b.cls, "x": b.x, "y": b.y, "l": b.l, "w": b.w, "yaw": b.yaw}
    if b.score is not None:
        d["score"] = b.score
    if b.occluded:
        d["occluded"] = True
    return d


def frame_from_json(d: dict, lineno: int = 0) -> FrameRecord:
    if not isinstance(d, dict):
        raise DatasetError(f"line {lineno}: record must be a JSON object")
    fid = str(d.get("frame_id", f"<line {lineno}>"))
    for key in ("frame_id", "ego_speed", "gt"):
        if key not in d:
            raise DatasetError(f"frame {fid}: missing field {key!r}")
    speed = float(d["ego_speed"])
    if speed < 0:
        raise DatasetError(f"frame {fid}: ego_speed must be >= 0")
    gt = tuple(_box_from_json(b, fid, "gt") for b in d["gt"])
    if "pred" not in d:
        log.warning("frame %s: no predictions recorded, treating as empty", fid)
    pred = tuple(_box_from_json(b, fid, "pred") for b in d.get("pred") or ())
    return FrameRecord(frame_id=fid, ego_speed=speed, objects_gt=gt, objects_pred=pred)


def frame_to_json(f: FrameRecord) -> dict:
    return {
        "frame_id": f.frame_id,
        "ego_speed": f.ego_speed,
        "gt": [_box_to_json(b) for b in f.objects_gt],
        "pred": [_box_to_json(b) for b in f.objects_pred],
    }


def load_dataset(path) -> list:
    """Read a JSONL dataset; blank lines are skipped."""
    frames = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: not valid JSON ({exc.msg})") from None
            frames.append(frame_from_json(d, lineno))
    return frames


def render_dataset(frames: Iterable[FrameRecord]) -> str:
    return "".join(json.dumps(frame_to_json(f)) + "\n" for f in frames)


def save_dataset(frames: Iterable[FrameRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_dataset(frames))


# ---------------------------------------------------------------- KITTI


def kitti_line_to_box(line: str, with_score: bool = False) -> Optional[ObjectBox]:
    """Convert one KITTI label line to an ego-frame box.

    KITTI locations are camera coordinates (x right, y down, z forward);
    the ego frame used here has x forward and y left, so
    ``x_ego = z_cam``, ``y_ego = -x_cam`` and ``yaw = -(rotation_y + pi/2)``.
    ``DontCare`` lines return None.
    """
    f = line.split()
    if not f:
        return None
    if len(f) < 15:
        raise DatasetError(f"KITTI label line has {len(f)} fields, need 15: {line.strip()!r}")
    kind = f[0]
    if kind == "DontCare":
        return None
    cls = KITTI_CLASS_MAP.get(kind, "other")
    occluded = int(float(f[2])) >= 2
    _h, w, l = (float(v) for v in f[8:11])
    xc, _yc, zc = (float(v) for v in f[11:14])
    ry = float(f[14])
    yaw = -(ry + math.pi / 2.0)
    yaw = math.atan2(math.sin(yaw), math.cos(yaw))
    score = None
    if with_score and len(f) > 15:
        score = min(1.0, max(0.0, float(f[15])))
    return ObjectBox(cls=cls, x=zc, y=-xc, l=l, w=w, yaw=yaw, score=score, occluded=occluded)


def _read_kitti(path: Path, with_score: bool) -> tuple:
    boxes = []
    for line in path.read_text().splitlines():
        b = kitti_line_to_box(line, with_score)
        if b is not None:
            boxes.append(b)
    return tuple(boxes)


def load_kitti(label_dir, pred_dir, ego_speed: float = 0.0) -> list:
    """Build frames from KITTI label files and same-named prediction files.

    KITTI labels carry no ego speed, so every frame gets ``ego_speed``.
    A label file without a prediction file yields an empty prediction set.
    """
    label_dir, pred_dir = Path(label_dir), Path(pred_dir)
    if not label_dir.is_dir():
        raise FileNotFoundError(f"no such label directory: {label_dir}")
    frames = []
    for lp in sorted(label_dir.glob("*.txt")):
        pp = pred_dir / lp.name
        if pp.exists():
            pred = _read_kitti(pp, with_score=True)
        else:
            log.warning("frame %s: no prediction file, treating as empty", lp.stem)
            pred = ()
        frames.append(FrameRecord(frame_id=lp.stem, ego_speed=float(ego_speed),
                                  objects_gt=_read_kitti(lp, with_score=False),
                                  objects_pred=pred))
    return frames


# ----------------------------------------------------------- partition


def _as_expr(cond):
    if cond is None or not isinstance(cond, str):
        return cond
    return dsl.parse(cond)


def partition(frames: Sequence[FrameRecord], hbss_filter, po_entries: Sequence,
              cfg: dsl.EvalConfig = dsl.DEFAULT_EVAL, level: int = 0) -> dict:
    """Split HBSS-conforming frames into per-PO test datasets.

    ``po_entries`` are :class:`iscap.case.PoEntry` values (or anything
    with ``id``, ``is_nominal`` and ``condition``).  A frame goes to the
    one non-nominal PO whose condition holds, otherwise to the nominal
    entry.  Frames satisfying two non-nominal conditions raise
    :class:`PartitionError`.  Every PO id appears in the result, possibly
    with an empty list.
    """
    from .case import condition_at

    hbss = _as_expr(condition_at(hbss_filter, level))
    non_nominal = []
    nominal_id = "Nom"
    for po in po_entries:
        if po.is_nominal:
            nominal_id = po.id
        else:
            non_nominal.append((po.id, _as_expr(condition_at(po.condition, level))))
    out = {nominal_id: []}
    for pid, _ in non_nominal:
        out[pid] = []
    for f in frames:
        if hbss is not None and not dsl.evaluate(hbss, f, cfg):
            continue
        hits = [pid for pid, cond in non_nominal if dsl.evaluate(cond, f, cfg)]
        if len(hits) > 1:
            raise PartitionError(f"frame {f.frame_id} satisfies several PO conditions: {hits}")
        out[hits[0] if hits else nominal_id].append(f)
    return out


def ensure_dir(path) -> None:
    d = os.path.dirname(os.fspath(path))
    if d:
        os.makedirs(d, exist_ok=True)
