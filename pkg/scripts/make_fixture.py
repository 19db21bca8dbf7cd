"""Regenerate the bundled desk-scale benchmark fixture (2 references x 1 style x 3 themes).

Media files are mock documents understood by the mock embedder, pose
estimator and video analyzer, so the fixture scores offline.
"""

from __future__ import annotations

import json
import shutil
import sys
from pathlib import Path

from vlogsmith.providers.mock import encode_mock

ROOT = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "src/vlogsmith/resources/benchmark_mini"

REFERENCES = [("ref_a", 101, "female", "adult"), ("ref_b", 202, "male", "child")]
THEMES = [
    ("A rainy afternoon in an old bookshop", [
        "The character shakes off an umbrella at the bookshop door and smiles at the owner.",
        "The character pulls a dusty atlas from a high shelf and flips through its maps.",
        "The character reads by the window while rain streaks the glass.",
        "The character pays for the atlas and steps back into the drizzle, hugging the book.",
    ]),
    ("Sunrise hike to a mountain lake", [
        "The character laces hiking boots at the trailhead under a pale sky.",
        "The character climbs a rocky switchback, pausing to catch breath and look back.",
        "The character reaches the lake as the sun breaks over the ridge.",
        "The character skips a stone across the still water.",
        "The character eats breakfast on a boulder, watching the mist lift.",
    ]),
    ("Cooking dinner for friends", [
        "The character picks tomatoes and herbs at a neighborhood market.",
        "The character chops vegetables in a small bright kitchen, music playing.",
        "The character tastes the sauce and adds a pinch of salt.",
        "The character sets the table with candles and mismatched plates.",
        "The character greets friends at the door and raises a glass.",
        "The character laughs at the crowded table as plates are passed around.",
    ]),
]


def image_doc(anchor: int, text: str, feature: int) -> bytes:
    return encode_mock({"kind": "image", "anchor_seed": anchor, "feature_seed": feature,
                        "mix": [0.8, 0.45, 0.4], "text": text, "width": 768, "height": 1360})


def video_doc(base: int, frames: list[int], drift: float, motion: float) -> bytes:
    return encode_mock({"kind": "video", "base_seed": base, "frame_seeds": frames, "drift": drift,
                        "motion": motion, "prompt": ""})


def main() -> None:
    if ROOT.exists():
        shutil.rmtree(ROOT)
    bench = ROOT / "benchmark"
    outputs = ROOT / "outputs"
    (bench / "references").mkdir(parents=True)
    manifest = {
        "schema_version": 1,
        "styles": [{"id": "watercolor", "text": "soft watercolor illustration with visible paper texture"}],
        "references": [],
        "items": [],
    }
    for rid, anchor, gender, age in REFERENCES:
        (bench / "references" / f"{rid}.img").write_bytes(
            encode_mock({"kind": "image", "anchor_seed": anchor, "feature_seed": 0, "mix": [1.0, 0.0, 0.0],
                         "text": "", "width": 768, "height": 1360}))
        manifest["references"].append({"id": rid, "image": f"references/{rid}.img", "gender": gender,
                                        "age_group": age})
    n = 0
    for rid, anchor, _, _ in REFERENCES:
        for theme, boards in THEMES:
            n += 1
            item_id = f"{n:03d}"
            manifest["items"].append({"id": item_id, "theme": theme, "style": "watercolor", "reference": rid})
            d = outputs / f"item_{item_id}"
            d.mkdir(parents=True)
            for i, text in enumerate(boards, start=1):
                (d / f"board_{i}.txt").write_text(text + "\n")
                (d / f"key_{i}.img").write_bytes(image_doc(anchor, text, n * 100 + i))
                if n == 1 and i == 1:
                    frames = [7] * 12  # a static clip
                else:
                    frames = [n * 1000 + i * 37 + (f // 2) for f in range(12)]
                (d / f"clip_{i}.vid").write_bytes(video_doc(n * 10 + i, frames, 0.2 + 0.05 * (i % 3),
                                                            0.05 + 0.04 * (n % 4)))
    (bench / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

    def dims(scores, reasons=None):
        names = ["story_interest", "temporal_continuity", "behavioral_diversity", "thematic_consistency"]
        return {"dimensions": [{"name": nm, "score": s, "reason": f"{nm.replace('_', ' ')}: scripted reason"}
                               for nm, s in zip(names, scores)]}

    replies = {
        "judge[001]": dims([4, 5, 5, 5]),
        "judge[002]": dims([3, 4, 4, 5]),
        "judge[003]": dims([5, 4, 3, 4]),
        "judge[004]": dims([4, 4, 4, 4]),
        # out of range first, repaired on the second ask
        "judge[005]": [dims([0, 4, 5, 5]), dims([2, 4, 5, 5])],
        # a dimension missing on both asks: the item stays unscored
        "judge[006]": [{"dimensions": dims([4, 4, 4, 4])["dimensions"][:3]}],
    }
    (ROOT / "judge_script.json").write_text(json.dumps({"name": "scripted-judge", "replies": replies}, indent=2) + "\n")
    print(f"fixture written to {ROOT}")


if __name__ == "__main__":
    main()
