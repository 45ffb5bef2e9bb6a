"""Nearest-class oracle over a word2vec text file.

Writes, for every stored token, the best-matching catalog class and its
cosine similarity. Exact catalog names are reported with similarity 1.
"""
import json
import pathlib
import sys

import numpy as np

ROOT = pathlib.Path(__file__).resolve().parent.parent
CATALOG = ROOT / "crates/core/data/coco80.txt"
FIXTURES = ROOT / "crates/core/tests/fixtures"


def load(path):
    rows = path.read_text().splitlines()
    vectors = {}
    for row in rows[1:]:
        parts = row.split()
        vectors[parts[0]] = np.array([float(np.float32(x)) for x in parts[1:]], dtype=np.float64)
    return vectors


def main(threshold=0.5):
    vectors = load(FIXTURES / "embeddings.txt")
    classes = sorted(c for c in CATALOG.read_text().splitlines() if c.strip())
    class_vecs = {}
    for c in classes:
        members = [vectors[w] for w in c.split() if w in vectors]
        if members:
            m = np.mean(members, axis=0)
            class_vecs[c] = m / np.linalg.norm(m)
    out = {}
    for token, v in vectors.items():
        if token in classes:
            out[token] = {"class": token, "similarity": 1.0, "mapped": True}
            continue
        sims = {c: float(v @ cv / np.linalg.norm(v)) for c, cv in class_vecs.items()}
        best = max(sims.values())
        best_class = min(c for c, s in sims.items() if s == best)
        runner_up = sorted(sims.values())[-2]
        out[token] = {
            "class": best_class,
            "similarity": best,
            "mapped": best >= threshold,
            "margin": best - runner_up,
        }
    (FIXTURES / "expected_mapping.json").write_text(json.dumps(out, indent=1, sort_keys=True) + "\n")
    for t in ["puppy", "kitten", "table", "the"]:
        print(t, out[t])
    print("max function-word similarity", max(out[w]["similarity"] for w in ["the", "a", "an", "of", "on", "with", "and", "is", "in", "picture", "thing", "sitting", "standing", "next", "to", "near", "photo", "at"]))
    print("min margin", min(o.get("margin", 1) for o in out.values()))


if __name__ == "__main__":
    main(*map(float, sys.argv[1:]))
