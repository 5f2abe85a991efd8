#!/usr/bin/env python3
"""Solve an exported LP or MPS model with HiGHS and print the result as JSON."""

import argparse
import json
import math
import sys

import highspy


def finite(v):
    return v if math.isfinite(v) else None


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("model")
    ap.add_argument("--time-limit", type=float, default=600.0)
    ap.add_argument("--gap", type=float, default=1e-6)
    ap.add_argument("--values", action="store_true", help="include nonzero variable values")
    args = ap.parse_args()

    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("time_limit", args.time_limit)
    h.setOptionValue("mip_rel_gap", args.gap)
    if h.readModel(args.model) != highspy.HighsStatus.kOk:
        print(json.dumps({"status": "read_error"}))
        return 1
    h.run()
    status = h.modelStatusToString(h.getModelStatus())
    info = h.getInfo()
    feasible = info.primal_solution_status == 2
    out = {
        "status": status,
        "objective": finite(info.objective_function_value) if feasible else None,
        "bound": finite(info.mip_dual_bound),
        "gap": finite(info.mip_gap),
    }
    if args.values and feasible:
        names = h.getLp().col_names_
        values = h.getSolution().col_value
        out["values"] = {n: v for n, v in zip(names, values) if abs(v) > 1e-9}
    print(json.dumps(out))
    return 0


if __name__ == "__main__":
    sys.exit(main())
