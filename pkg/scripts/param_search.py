"""Search architecture widths whose parameter counts land near the published
45,122 (full variant) and 11,138 (lightweight variant).

The published counts come from widths this package cannot see; this script
only shows which nearby configurations come closest at a given input size.

    python scripts/param_search.py --size 256 --top 5
"""
from __future__ import annotations

import argparse
import itertools
from dataclasses import dataclass

from bathcls.model import ModelConfig, build_model, count_params

TARGETS = {"decusr": 45122, "decusr_l": 11138}


@dataclass
class SearchSpace:
    feb_first: tuple = (8, 16, 32, 64)
    feb_rest: tuple = (4, 8, 16, 32)
    rb_count: tuple = (1, 2, 3, 4)
    rb_filters: tuple = (4, 8, 16, 32)
    rb_depth: tuple = (1, 2, 3)
    flags: tuple = ((True, False), (True, True), (False, False), (False, True))


def search(variant: str, size: int, space: SearchSpace = SearchSpace()):
    target = TARGETS[variant]
    found = []
    for f1, fr, rc, rf, rd, (mp, bn) in itertools.product(
        space.feb_first, space.feb_rest, space.rb_count, space.rb_filters, space.rb_depth, space.flags
    ):
        cfg = ModelConfig(variant=variant, feb_filters=(f1, fr, fr, fr), rb_count=rc, rb_filters=rf, rb_depth=rd,
                          use_maxpool=mp, use_batchnorm=bn, input_size=size)
        try:
            n = count_params(build_model(cfg))
        except ValueError:
            continue
        found.append((abs(n - target), n, cfg))
    found.sort(key=lambda t: t[0])
    return found


def main(argv=None):
    p = argparse.ArgumentParser(description="Closest parameter counts to the published ones.")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--top", type=int, default=5)
    a = p.parse_args(argv)
    for variant, target in TARGETS.items():
        print(f"{variant}: target {target}")
        for gap, n, c in search(variant, a.size)[: a.top]:
            print(f"  {n:>7} (off by {gap:>5})  feb={c.feb_filters} rb={c.rb_count}x{c.rb_depth}@{c.rb_filters}"
                  f" mp={c.use_maxpool} bn={c.use_batchnorm}")


if __name__ == "__main__":
    main()
