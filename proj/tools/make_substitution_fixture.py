#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Regenerate the crop-substitution fixture.

Writes per-question correctness records whose per-subset counts are
round(pct * n / 100) of the published accuracy, plus the published table
they are checked against. Output is byte-stable.
"""
import argparse
import json
import math
import pathlib
import random

SUBSETS = {
    "HR-Bench 8K": [("FSP", 100), ("FCP", 100)],
    "HR-Bench 4K": [("FSP", 100), ("FCP", 100)],
    "V*": [("Attr", 115), ("Spatial", 76)],
}

# model -> budget -> mode -> benchmark -> [subset..., Overall]
TABLE = {
    "DeepEyes": {
        16384: {
            "prediction": {"HR-Bench 8K": [83.0, 53.0, 68.0], "HR-Bench 4K": [92.0, 56.0, 74.0], "V*": [84.3, 88.2, 85.9]},
            "noise": {"HR-Bench 8K": [83.0, 54.0, 68.5], "HR-Bench 4K": [94.0, 57.0, 75.5], "V*": [83.5, 88.2, 85.4]},
            "gt": {"HR-Bench 8K": [86.0, 53.0, 69.5], "HR-Bench 4K": [93.0, 55.0, 74.0], "V*": [86.1, 89.5, 87.5]},
        },
        1024: {
            "prediction": {"HR-Bench 8K": [68.0, 59.0, 63.5], "HR-Bench 4K": [78.0, 54.0, 66.0], "V*": [75.7, 76.3, 75.9]},
            "noise": {"HR-Bench 8K": [62.0, 57.0, 59.5], "HR-Bench 4K": [73.0, 54.0, 63.5], "V*": [73.0, 77.6, 74.8]},
            "gt": {"HR-Bench 8K": [70.0, 59.0, 64.5], "HR-Bench 4K": [79.0, 54.0, 66.5], "V*": [77.4, 77.6, 77.5]},
        },
    },
    "CoF-sft": {
        16384: {
            "prediction": {"HR-Bench 8K": [87.0, 53.0, 70.0], "HR-Bench 4K": [94.0, 52.0, 73.0], "V*": [90.4, 85.5, 88.5]},
            "noise": {"HR-Bench 8K": [85.0, 52.0, 68.5], "HR-Bench 4K": [90.0, 53.0, 71.5], "V*": [80.9, 84.2, 82.2]},
            "gt": {"HR-Bench 8K": [89.0, 51.0, 70.0], "HR-Bench 4K": [96.0, 54.0, 75.0], "V*": [91.3, 85.5, 89.0]},
        },
        1024: {
            "prediction": {"HR-Bench 8K": [68.0, 53.0, 60.5], "HR-Bench 4K": [78.0, 54.0, 66.0], "V*": [73.0, 72.4, 72.8]},
            "noise": {"HR-Bench 8K": [55.0, 55.0, 55.0], "HR-Bench 4K": [65.0, 55.0, 60.0], "V*": [65.2, 72.4, 68.1]},
            "gt": {"HR-Bench 8K": [77.0, 54.0, 65.5], "HR-Bench 4K": [85.0, 57.0, 71.0], "V*": [87.0, 78.9, 83.8]},
        },
    },
}


def slug(benchmark):
    return benchmark.lower().replace("-", "").replace(" ", "").replace("*", "star")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data" / "fixtures"))
    args = parser.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    records, cells = [], []
    for model, budgets in TABLE.items():
        for budget, modes in budgets.items():
            for mode, benchmarks in modes.items():
                for benchmark, values in benchmarks.items():
                    subsets = SUBSETS[benchmark]
                    for (subset, n), pct in zip(subsets, values):
                        correct = math.floor(pct * n / 100 + 0.5)
                        flags = [True] * correct + [False] * (n - correct)
                        random.Random(f"{model}|{budget}|{mode}|{benchmark}|{subset}").shuffle(flags)
                        for i, flag in enumerate(flags):
                            records.append({
                                "model": model, "budget": budget, "mode": mode, "benchmark": benchmark,
                                "subset": subset, "instance_id": f"{slug(benchmark)}-{subset.lower()}-{i:03d}",
                                "correct": flag,
                            })
                    columns = [s for s, _ in subsets] + ["Overall"]
                    for column, value in zip(columns, values):
                        cells.append({"model": model, "budget": budget, "mode": mode, "benchmark": benchmark,
                                      "column": column, "value": value})

    with open(out / "substitution_records.jsonl", "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n")
    with open(out / "substitution_published.json", "w", encoding="utf-8") as f:
        json.dump({"cells": cells}, f, indent=1, sort_keys=True)
        f.write("\n")
    print(f"{len(records)} records, {len(cells)} cells -> {out}")


if __name__ == "__main__":
    main()
