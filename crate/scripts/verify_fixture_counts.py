"""Count a COCO file restricted to a shot list, independently of the Rust loader.

Writes the expected figures the integration tests compare against:

    python3 scripts/verify_fixture_counts.py \
        crates/core/tests/fixtures/ten_shot_20cat.json \
        crates/core/tests/fixtures/ten_shot_20cat.shots.txt \
        > crates/core/tests/fixtures/ten_shot_20cat.expected.json
"""

import json
import sys
from collections import Counter


def main(coco_path, shots_path):
    doc = json.load(open(coco_path))
    ids = set()
    for line in open(shots_path):
        line = line.strip()
        if line and not line.startswith("#"):
            ids.add(int(line))
    anns = [a for a in doc["annotations"] if a["id"] in ids]
    per_cat = Counter(a["category_id"] for a in anns)
    names = {c["id"]: c["name"] for c in doc["categories"]}
    per_image = Counter(a["image_id"] for a in anns)
    modal = Counter(per_cat.values()).most_common()
    best = max(n for _, n in modal)
    shots = min(k for k, n in modal if n == best)
    out = {
        "n_images": len(per_image),
        "n_annotations": len(anns),
        "n_categories": len(per_cat),
        "shots": shots,
        "per_category": {names[c]: per_cat[c] for c in sorted(per_cat)},
        "objects_per_image": {str(i): per_image[i] for i in sorted(per_image)},
    }
    json.dump(out, sys.stdout, indent=1)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
