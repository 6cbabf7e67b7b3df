"""Smoke test for the devgraph extension module.

Install the module first, e.g. `pip install --no-build-isolation -e crates/py`.
"""

import json
import os
import sys
import tempfile

import devgraph


def main():
    k, d = devgraph.degree_and_density(14_000_000, 472_000_000)
    assert int(k) == 33 and f"{d:.0e}" == "2e-06", (k, d)
    assert devgraph.min_max_normalize([2.0, 4.0, 6.0]) == [0.0, 0.5, 1.0]

    tri = devgraph.Graph(
        [f"n{i}" for i in range(6)],
        reblog=[(0, 1, 1), (1, 2, 1), (2, 0, 1), (3, 4, 1), (4, 5, 1), (5, 3, 1), (2, 3, 1)],
    )
    assignment, q = tri.louvain(seed=1)
    assert len(set(assignment[:3])) == 1 and len(set(assignment[3:])) == 1
    assert assignment[0] != assignment[3] and q > 0.35, (assignment, q)
    stats = tri.stats("reblog")
    assert stats["n"] == 6 and stats["e"] == 7, stats

    with tempfile.TemporaryDirectory() as tmp:
        fixture = os.path.join(tmp, "in")
        devgraph.write_synth(11, fixture)

        log = devgraph.QueryLog.read(os.path.join(fixture, "query_log.tsv"))
        with open(os.path.join(fixture, "seed_keywords.txt")) as f:
            seeds = [line.strip() for line in f if line.strip()]
        ex = log.extract(seeds, eps=0.0)
        assert ex["converged"] and len(ex["blogs"]) > 0, ex["trajectory"]

        g = devgraph.Graph.read(os.path.join(fixture, "edges.tsv"))
        assert g.load_labels(os.path.join(fixture, "labels.csv")) == []
        diff = devgraph.Diffusion(g, os.path.join(fixture, "events.tsv"))
        assert diff.num_trees > 0
        assert len(diff.classes()) == g.num_nodes
        curve = diff.shrinkage(g, [0, 5, 20], "by_volume")
        assert curve[0] == 1.0 and curve == sorted(curve, reverse=True), curve
        perception = diff.perception(g)
        assert len(perception) == 101 and perception[0] == 1.0

        out = os.path.join(tmp, "out")
        code = devgraph.run_cli(["pipeline", "--config", os.path.join(fixture, "pipeline.conf"), "--out", out])
        assert code == 0, code
        with open(os.path.join(out, "report.json")) as f:
            report = json.load(f)
        assert report["schema_version"] == 1
        assert devgraph.run_cli(["synth", "--out", out]) == 2

    print(f"devgraph smoke test passed ({g!r})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
