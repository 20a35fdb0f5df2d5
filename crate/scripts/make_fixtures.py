"""Generate the COCO fixtures under crates/core/tests/fixtures.

Deterministic for a fixed seed. Run from the repository root:

    python3 scripts/make_fixtures.py
"""

import json
import random
from pathlib import Path

OUT = Path("crates/core/tests/fixtures")

NAMES = [
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck",
    "boat", "traffic light", "fire hydrant", "stop sign", "bench", "bird", "cat",
    "dog", "horse", "sheep", "cow", "elephant",
]
FRAMES = [(640, 480), (480, 640), (500, 375)]


def box(rng, w, h):
    bw = rng.uniform(0.05, 0.5) * w
    bh = rng.uniform(0.05, 0.5) * h
    x = rng.uniform(0, w - bw)
    y = rng.uniform(0, h - bh)
    return [round(x, 2), round(y, 2), round(bw, 2), round(bh, 2)]


def ten_shot(rng):
    """20 categories, 10 selected instances each, plus unselected distractor images."""
    cats = [{"id": i * 2 + 1, "name": n, "supercategory": "thing"} for i, n in enumerate(NAMES)]
    pool = [c["id"] for c in cats for _ in range(10)]
    rng.shuffle(pool)
    images, anns, shots = [], [], []
    img_id, ann_id = 1000, 1
    while pool:
        take = min(len(pool), rng.randint(1, 4))
        w, h = rng.choice(FRAMES)
        images.append({"id": img_id, "file_name": f"{img_id:012d}.jpg", "width": w, "height": h,
                       "license": 1})
        for cid in pool[:take]:
            b = box(rng, w, h)
            anns.append({"id": ann_id, "image_id": img_id, "category_id": cid, "bbox": b,
                         "area": round(b[2] * b[3], 2), "iscrowd": 0})
            shots.append(ann_id)
            ann_id += 1
        pool = pool[take:]
        img_id += 1
    for _ in range(15):
        w, h = rng.choice(FRAMES)
        images.append({"id": img_id, "file_name": f"{img_id:012d}.jpg", "width": w, "height": h,
                       "license": 1})
        for _ in range(rng.randint(1, 3)):
            b = box(rng, w, h)
            anns.append({"id": ann_id, "image_id": img_id, "category_id": rng.choice(cats)["id"],
                         "bbox": b, "area": round(b[2] * b[3], 2), "iscrowd": 0})
            ann_id += 1
        img_id += 1
    order = list(range(len(images)))
    rng.shuffle(order)
    doc = {
        "info": {"description": "synthetic 10-shot fixture"},
        "licenses": [{"id": 1, "name": "none"}],
        "images": [images[i] for i in order],
        "annotations": anns,
        "categories": cats,
    }
    return doc, shots


def tiny(rng, n_images=10):
    """Small frames for end-to-end runs."""
    cats = [{"id": 1, "name": "cat"}, {"id": 2, "name": "dog"}, {"id": 3, "name": "traffic light"}]
    images, anns = [], []
    ann_id = 1
    for i in range(n_images):
        w, h = 96, 72
        images.append({"id": i + 1, "file_name": f"tiny_{i + 1:03d}.jpg", "width": w, "height": h})
        for _ in range(rng.randint(1, 3)):
            anns.append({"id": ann_id, "image_id": i + 1, "category_id": rng.choice(cats)["id"],
                         "bbox": box(rng, w, h)})
            ann_id += 1
    return {"images": images, "annotations": anns, "categories": cats}


def main():
    rng = random.Random(20241015)
    OUT.mkdir(parents=True, exist_ok=True)
    doc, shots = ten_shot(rng)
    (OUT / "ten_shot_20cat.json").write_text(json.dumps(doc, indent=1) + "\n")
    lines = ["# few-shot split: one annotation id per line"] + [str(s) for s in sorted(shots)]
    (OUT / "ten_shot_20cat.shots.txt").write_text("\n".join(lines) + "\n")
    (OUT / "tiny10.json").write_text(json.dumps(tiny(rng), indent=1) + "\n")


if __name__ == "__main__":
    main()
