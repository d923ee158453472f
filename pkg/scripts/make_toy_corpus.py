"""Render the procedural toy corpus as PPM class folders.

    python scripts/make_toy_corpus.py toy/superset --per-class 120 --seed 1
    python scripts/make_toy_corpus.py toy/base --per-class 50 --seed 2 --sources alpha
"""
import argparse

from signgan.toycorpus import SOURCES, write_corpus


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("root")
    p.add_argument("--per-class", type=int, default=120)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sources", nargs="+", default=sorted(SOURCES), choices=sorted(SOURCES))
    args = p.parse_args()
    write_corpus(args.root, args.per_class, args.seed, tuple(args.sources))
    print(f"wrote {args.per_class} images/class for {', '.join(args.sources)} under {args.root}")


if __name__ == "__main__":
    main()
