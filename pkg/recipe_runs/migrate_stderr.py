"""Add the ``stderr_window`` column to checkpoints written before it existed.

Old rows carried the per-trajectory window error in ``stderr``. It moves to
``stderr_window``, and ``stderr`` is recomputed from the stored ensemble series
exactly as a fresh run now computes it. When every point of a run is done, its
results table is rewritten from the checkpoints.

    python recipe_runs/migrate_stderr.py recipe_runs/<run> [...]
"""

import json
import sys
from pathlib import Path

from monitored_fermions import orchestrator
from monitored_fermions.trajectory import steady_state_average


def migrate(run_dir: Path) -> int:
    m = orchestrator.load_manifest(run_dir)
    changed, rows, complete = 0, [], True
    for p in m["points"]:
        if p["status"] != "done":
            complete = False
            continue
        ck = run_dir / "points" / f"{p['id']}.json"
        payload = json.loads(ck.read_text())
        series = run_dir / "series" / f"{p['id']}.csv"
        ens = orchestrator.read_series(series) if series.exists() else None
        for r in payload["rows"]:
            if "stderr_window" in r:
                continue
            r["stderr_window"] = r["stderr"]
            if ens is not None:
                r["stderr"] = steady_state_average(ens, r["t0"], r["tf"], r["observable"]).stderr
            changed += 1
        orchestrator._write_json(ck, payload)
        rows.extend(payload["rows"])
    if complete:
        orchestrator.write_results(run_dir / "results.csv", rows)
    return changed


if __name__ == "__main__":
    for d in sys.argv[1:]:
        print(d, migrate(Path(d)), "rows migrated")
