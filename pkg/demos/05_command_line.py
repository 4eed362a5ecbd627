"""
Driving the batch command line
==============================

The same pipeline through the ``fasthgt`` command: simulate, estimate a
PHYLIP matrix, reconstruct, and compare against the generating tree.
"""

import json
import tempfile
from pathlib import Path

from fasthgt.cli import main

work = Path(tempfile.mkdtemp())
main(["simulate", "--n", "10", "--ell", "200000", "--seed", "5", "--out", str(work / "sim")])
main(["distances", "--in", str(work / "sim" / "seqs.fasta"), "--out", str(work / "d.phy")])
code = main(["reconstruct", "--in", str(work / "d.phy"), "--out", str(work / "rec.nwk")])
print("reconstruct exit code:", code)
print(json.loads((work / "rec.nwk.json").read_text())["status"])

main(["evaluate", "--in", str(work / "rec.nwk"), "--truth", str(work / "sim" / "tree.nwk"),
      "--delta-min", "0.0172", "--out", str(work / "eval.json")])
print(json.loads((work / "eval.json").read_text()))
