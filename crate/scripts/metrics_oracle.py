"""Recompute a report's means from detections and object-list JSONL files."""
import json
import sys
from fractions import Fraction


def read(path):
    return [json.loads(l) for l in open(path) if l.strip()]


def main(dets, objs, report):
    rect = {r["image_id"]: {d["class"] for d in r["detections"]} for r in read(dets)}
    inc, comp = [], []
    for o in read(objs):
        R = rect[o["image_id"]]
        if not R:
            continue
        D = set(o["objects"])
        inc.append(Fraction(len(D - R), len(R)))
        comp.append(Fraction(len(D & R), len(R)))
    mi, mc = sum(inc) / len(inc), sum(comp) / len(comp)
    rep = json.load(open(report))
    assert rep["mean_inconsistency_ratio"] == str(mi), (rep["mean_inconsistency_ratio"], mi)
    assert rep["mean_completeness_ratio"] == str(mc), (rep["mean_completeness_ratio"], mc)
    print("ok", mi, mc, float(mi), float(mc))


if __name__ == "__main__":
    main(*sys.argv[1:])
