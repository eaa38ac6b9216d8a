#!/usr/bin/env python3
"""Join FSD50K's ground truth with its clip info into a fedsim clip manifest.

    python3 tools/fsd50k_manifest.py \
        FSD50K.ground_truth/dev.csv \
        FSD50K.metadata/dev_clips_info_FSD50K.json \
        fsd50k_dev_manifest.csv

dev.csv supplies fname, labels (comma separated) and split (train/val);
the clips-info JSON maps each fname to a record holding "uploader".
Durations are left empty.
"""
import argparse
import csv
import json
import sys


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("ground_truth", help="FSD50K.ground_truth/dev.csv")
    ap.add_argument("clips_info", help="FSD50K.metadata/dev_clips_info_FSD50K.json")
    ap.add_argument("out", help="output manifest CSV")
    args = ap.parse_args()

    with open(args.clips_info, encoding="utf-8") as f:
        info = json.load(f)

    missing = 0
    with open(args.ground_truth, newline="", encoding="utf-8") as src, \
            open(args.out, "w", newline="", encoding="utf-8") as dst:
        out = csv.writer(dst, lineterminator="\n")
        out.writerow(["clip_id", "uploader", "labels", "split", "duration_s"])
        for row in csv.DictReader(src):
            fname = row["fname"]
            rec = info.get(fname)
            if rec is None or not rec.get("uploader"):
                missing += 1
                continue
            labels = "|".join(l for l in row["labels"].split(",") if l)
            out.writerow([fname, rec["uploader"], labels, row["split"], ""])
    if missing:
        print(f"skipped {missing} clips without uploader info", file=sys.stderr)


if __name__ == "__main__":
    main()
