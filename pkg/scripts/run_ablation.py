"""Toy-scale sweeps over every ablation axis; values are not comparable to published numbers."""
import argparse
from dataclasses import replace

from asgnn_sr.cli import run_ablation
from asgnn_sr.toydata import toy_network, toy_pairs, toy_run

AXES = ["bicubic", "fem", "attention", "alpha", "mco-msc"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--axes", nargs="+", default=AXES, choices=AXES)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--steps", type=int, default=50, help="steps per epoch")
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()

    pairs = toy_pairs(count=20, size=96, scale=2, seed=a.seed)
    run = replace(toy_run(a.seed), epochs=a.epochs, steps_per_epoch=a.steps)
    for axis in a.axes:
        print(f"== {axis}")
        print(run_ablation(axis, pairs[:15], pairs[15:], toy_network(), run))


if __name__ == "__main__":
    main()
