"""Rewrite the frozen regression files under tests/golden.

Run only after an intentional numerical change, then review the diff.
"""

import csv
import shutil
from pathlib import Path

from descent_gnc.logs import SUMMARY_FILE, TIMING_FILE, emit_logs
from descent_gnc.mpc import build_constraint_set
from descent_gnc.scenario import load_scenario
from descent_gnc.simulation import prepare, run_closed_loop

GOLDEN = Path(__file__).resolve().parents[1] / "tests" / "golden"


def leg2_fov_rows():
    """Untightened FOV and altitude rows of leg 2 at t = 0, expressed on the state."""
    s = prepare(load_scenario("leg2"))
    lin = s.model.linearize(s.xi0, s.reference.u[0], 0.0)
    cset = build_constraint_set(s.xi0, lin, s.model.sensors.measure(s.xi0, None, 0.0), s.mpc)
    return cset.state_rows(lin.H), cset.s


def short_run(out_dir):
    cfg = load_scenario("leg2").with_overrides(n_steps=10)
    paths = emit_logs(run_closed_loop(cfg), out_dir)
    # wall-clock files are not reproducible
    paths[TIMING_FILE].unlink()
    paths[SUMMARY_FILE].unlink()
    return out_dir


def main():
    GOLDEN.mkdir(parents=True, exist_ok=True)
    f_len = prepare(load_scenario("leg1")).f_len
    (GOLDEN / "leg1_f_len.txt").write_text(repr(f_len) + "\n")

    rows, bounds = leg2_fov_rows()
    with open(GOLDEN / "leg2_rows_t0.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for r, b in zip(rows, bounds):
            w.writerow([repr(float(v)) for v in r] + [repr(float(b))])

    target = GOLDEN / "leg2_10step"
    if target.exists():
        shutil.rmtree(target)
    short_run(target)
    print(GOLDEN)


if __name__ == "__main__":
    main()
