"""Write the 20-image procedural toy dataset (15 train / 5 test) as 16-bit PGMs."""
import argparse

from asgnn_sr.toydata import write_toy_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out")
    ap.add_argument("--count", type=int, default=20)
    ap.add_argument("--held-out", type=int, default=5)
    ap.add_argument("--size", type=int, default=96)
    ap.add_argument("--scale", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    tr, te = write_toy_dataset(a.out, a.count, a.held_out, a.size, a.scale, a.seed)
    print(f"{len(tr)} train / {len(te)} test pairs in {a.out}")


if __name__ == "__main__":
    main()
