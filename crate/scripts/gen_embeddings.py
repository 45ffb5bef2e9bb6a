"""Generate the word2vec text fixtures used by the test suite.

Every catalog word gets a random unit-ish vector; synonyms are their target
word plus noise; function words are independent random vectors.
"""
import pathlib

import numpy as np

ROOT = pathlib.Path(__file__).resolve().parent.parent
CATALOG = ROOT / "crates/core/data/coco80.txt"
FIXTURES = ROOT / "crates/core/tests/fixtures"
DIM = 64

SYNONYMS = {
    "puppy": "dog",
    "kitten": "cat",
    "automobile": "car",
    "bike": "bicycle",
    "sofa": "couch",
    "man": "person",
    "woman": "person",
    "boy": "person",
    "girl": "person",
    "motorbike": "motorcycle",
    "plane": "airplane",
    "doughnut": "donut",
    "television": "tv",
    "puppies": "dog",
}
FUNCTION_WORDS = [
    "the", "a", "an", "of", "on", "with", "and", "is", "in", "picture",
    "thing", "sitting", "standing", "next", "to", "near", "photo", "at",
]


def main():
    rng = np.random.default_rng(20241014)
    classes = [c for c in CATALOG.read_text().splitlines() if c.strip()]
    words = []
    for c in classes:
        for w in c.split():
            if w not in words:
                words.append(w)
    vectors = {}
    for w in words:
        vectors[w] = rng.normal(size=DIM)
    for syn, target in SYNONYMS.items():
        vectors[syn] = vectors[target] + 0.45 * rng.normal(size=DIM)
    for w in FUNCTION_WORDS:
        vectors[w] = rng.normal(size=DIM)
    # "table" alone stays a plain catalog word vector: the class is "dining table".
    lines = [f"{len(vectors)} {DIM}"]
    for token, v in vectors.items():
        lines.append(token + " " + " ".join(f"{x:.5f}" for x in v))
    (FIXTURES / "embeddings.txt").write_text("\n".join(lines) + "\n")

    small_rng = np.random.default_rng(7)
    small = [f"tok{i:02}" for i in range(50)]
    lines = [f"50 8"]
    for t in small:
        lines.append(t + " " + " ".join(f"{x:.4f}" for x in small_rng.normal(size=8)))
    (FIXTURES / "embeddings_50.txt").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
