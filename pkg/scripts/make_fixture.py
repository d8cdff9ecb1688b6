"""Write the 50-frame synthetic metrics fixture and its hand labels.

Each frame is built from an explicit label row (in HBSS?, crowded?, FNA?,
how the leading car is detected), so the expected counts come from the
table below and not from the metric code.

    python scripts/make_fixture.py [OUT_DIR]
"""

import json
import sys
from pathlib import Path

CAR = dict(l=4.2, w=1.8)

# (leading-car handling, in_hbss, crowd, fna)
#   exact      prediction identical to the ground truth
#   offset     prediction shifted 0.5 m (IoU ~0.79, still a match)
#   none       no prediction for the leading car
#   far        prediction shifted 3 m (IoU 0)
#   wrongcls   prediction labelled pedestrian
#   occluded   occluded leading car, no prediction
#   behind     leading car detected, a second car behind it is missed
#   side       the only car is in the next lane (not ahead)
#   empty      no objects at all
ROWS = (
    [("empty", False, False, False)] * 2
    + [("side", False, False, False)] * 3
    # crowded HBSS frames
    + [("exact", True, True, False)] * 4
    + [("offset", True, True, False)] * 2
    + [("behind", True, True, False)]
    + [("none", True, True, True)]
    + [("far", True, True, True)]
    + [("wrongcls", True, True, True)]
    # nominal HBSS frames
    + [("exact", True, False, False)] * 20
    + [("offset", True, False, False)] * 6
    + [("behind", True, False, False)] * 5
    + [("none", True, False, True)] * 2
    + [("far", True, False, True)]
    + [("occluded", True, False, True)]
)


def box(cls, x, y, score=None, occluded=False, **size):
    d = {"class": cls, "x": x, "y": y, **(size or CAR), "yaw": 0.0}
    if score is not None:
        d["score"] = score
    if occluded:
        d["occluded"] = True
    return d


PED = dict(l=0.6, w=0.6)


def frame(i, kind, crowd):
    gt, pred = [], []
    lead_x = 15.0 + (i % 7)
    if kind == "side":
        gt.append(box("car", lead_x, 3.5))
        pred.append(box("car", lead_x, 3.5, score=0.9))
    elif kind != "empty":
        gt.append(box("car", lead_x, 0.2, occluded=(kind == "occluded")))
        if kind == "exact":
            pred.append(box("car", lead_x, 0.2, score=0.9))
        elif kind == "offset":
            pred.append(box("car", lead_x + 0.5, 0.2, score=0.8))
        elif kind == "far":
            pred.append(box("car", lead_x + 3.0, 0.2 + 3.0, score=0.6))
        elif kind == "wrongcls":
            pred.append(box("pedestrian", lead_x, 0.2, score=0.7))
        elif kind == "behind":
            pred.append(box("car", lead_x, 0.2, score=0.9))
            gt.append(box("car", lead_x + 10.0, 0.0))
    if crowd:
        # 11 pedestrians inside 40 m, all detected
        for k in range(11):
            px, py = 5.0 + 2.5 * k, -6.0 if k % 2 else 6.0
            gt.append(box("pedestrian", px, py, **PED))
            pred.append(box("pedestrian", px, py, score=0.8, **PED))
    elif kind in ("exact", "offset"):
        # some nominal clutter beyond the crowd radius
        gt.append(box("pedestrian", 45.0, 5.0, **PED))
    return {"frame_id": f"{i:06d}", "ego_speed": 8.0, "gt": gt, "pred": pred}


def main(out_dir="tests/fixtures"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    assert len(ROWS) == 50
    labels = []
    with open(out / "metrics50.jsonl", "w") as fh:
        for i, (kind, hbss, crowd, fna) in enumerate(ROWS):
            fh.write(json.dumps(frame(i, kind, crowd)) + "\n")
            labels.append({"frame_id": f"{i:06d}", "kind": kind, "hbss": hbss,
                           "po": ("Crowd" if crowd else "Nom") if hbss else None, "fna": fna})
    counts = {}
    for po in ("Crowd", "Nom"):
        rows = [r for r in labels if r["po"] == po]
        counts[po] = {"N": len(rows), "count": sum(r["fna"] for r in rows)}
    with open(out / "metrics50_labels.json", "w") as fh:
        json.dump({"frames": labels, "counts": counts}, fh, indent=1)
        fh.write("\n")
    print(json.dumps(counts))


if __name__ == "__main__":
    main(*sys.argv[1:])
