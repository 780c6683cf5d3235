#!/usr/bin/env python3
"""Writes the ideal-window golden file from the device table constants.

Independent of the Rust code: evaluates the all-active range
[(n+2)/(n+1)·I/G_C] and the all-amorphous upper bound directly.
"""
import json
import pathlib

G_A = 660e-9
G_C = 160e-6
I_SET = 50e-6
I_RESET = 100e-6

out = []
for n_x in [0, 1, 2, 7, 15, 31, 63, 127, 255]:
    n1 = n_x + 1
    lo = (n1 + 1) / n1 * I_SET / G_C
    hi1 = (n1 + 1) / n1 * I_RESET / G_C
    r2 = (n1 * G_A + G_C) / (n1 * G_A * G_C) * I_SET
    out.append({"n_x": n_x, "v_min": lo, "r1_hi": hi1, "r2_hi": r2, "v_max": min(hi1, r2)})

path = pathlib.Path(__file__).resolve().parent.parent / "crates/core/tests/golden/ideal_window.json"
path.write_text(json.dumps(out, indent=2) + "\n")
print(f"wrote {len(out)} entries to {path}")
