"""Colour-dependent bolting: reading and sampling a small relational model.

Parts that share a colour are more likely to be bolted together.  This
script evaluates the bolting tree for two colourings, then samples many
initial slices and checks that the empirical bolting rate matches the tree.

Run with ``python demos/color_bolting.py``.
"""

from pathlib import Path

import numpy as np

from rdbn import WorldState, eval_fopt, load_model, sample_slice

MODEL = Path(__file__).resolve().parent.parent / "models" / "color_bolting.rdbn"


def colouring(model, assignment):
    return WorldState(model.vocabulary, 0, [("Color", (p, c)) for p, c in assignment.items()])


def main():
    model = load_model(MODEL)
    tree = model.initial["BoltedTo"]
    for assignment in ({"P1": "Red", "P2": "Red"}, {"P1": "Red", "P2": "Blue"}):
        p = eval_fopt(tree, ("P1", "P2"), colouring(model, assignment))
        print(f"P(BoltedTo(P1,P2) | {assignment}) = {p:.3f}")

    # sample whole slices and split the (P1, P2) outcomes by colour agreement
    rng = np.random.default_rng(0)
    hits = {True: [0, 0], False: [0, 0]}
    for _ in range(4000):
        s = sample_slice(model, None, rng)
        same = any(("Color", ("P1", c)) in s.facts and ("Color", ("P2", c)) in s.facts
                   for c in ("Red", "Blue"))
        hits[same][0] += ("BoltedTo", ("P1", "P2")) in s.facts
        hits[same][1] += 1
    for same, (k, n) in hits.items():
        label = "shared colour" if same else "no shared colour"
        print(f"sampled rate, {label}: {k / n:.3f} over {n} slices")


if __name__ == "__main__":
    main()
