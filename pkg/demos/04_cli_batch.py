"""Batch runs through the command line entry point.

Runs a short two-seed batch of the behind cut-in scene, then compares the
two eco controllers inside the written summary. In that scene the cut-in
merges behind, so the cut-in aware controller ignores it and both
controllers should report the same energy.
"""
import json
import os
import tempfile

from ecosim.cli import main

out = os.path.join(tempfile.mkdtemp(), "behind")
rc = main(["run", "--scenario", "behind_cutin", "--controller", "all", "--roles", "follower",
           "--reps", "2", "--out", out])
print(f"exit code {rc}; traces: {sorted(os.listdir(os.path.join(out, 'traces')))}")

summary = os.path.join(out, "summary.json")
with open(summary) as fh:
    print(json.dumps({k: v["mean"] for k, v in json.load(fh).items()}, indent=2))
main(["compare", summary, "--base", "eco", "--new", "eco-cutin"])
