#!/usr/bin/env python3
"""Runs the CLI end to end and checks every JSON artefact against schemas/,
plus a parse-back of every CSV it wrote."""

import argparse
import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path

from jsonschema import Draft202012Validator
from referencing import Registry, Resource

SCAN_HEADER = ["position_nm", "counts", "voltage_V", "is_reference", "seed"]
CHI_HEADER = ["voltage", "chi", "sigma", "included"]


def load_registry(schema_dir):
    schemas = {}
    for path in sorted(schema_dir.glob("*.schema.json")):
        schemas[path.name] = json.loads(path.read_text())
    registry = Registry().with_resources(
        (name, Resource.from_contents(body)) for name, body in schemas.items())
    return schemas, registry


class Checker:
    def __init__(self, schema_dir):
        self.schemas, self.registry = load_registry(schema_dir)
        for body in self.schemas.values():
            Draft202012Validator.check_schema(body)
        self.failures = []

    def validate(self, path, schema_name):
        validator = Draft202012Validator(self.schemas[schema_name], registry=self.registry)
        doc = json.loads(Path(path).read_text())
        errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.path))
        for e in errors:
            self.failures.append(f"{path}: {'/'.join(map(str, e.path))}: {e.message}")
        print(f"{'ok  ' if not errors else 'FAIL'} {schema_name:24s} {path}")
        return doc

    def expect(self, cond, msg):
        if not cond:
            self.failures.append(msg)


def read_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


def check_scan_csv(checker, path, points, voltage, is_ref, seed):
    header, rows = read_csv(path)
    checker.expect(header == SCAN_HEADER, f"{path}: header {header}")
    checker.expect(len(rows) == points, f"{path}: {len(rows)} rows, expected {points}")
    for r in rows:
        checker.expect(len(r) == 5, f"{path}: row {r}")
        float(r[0])
        checker.expect(float(r[1]) >= 0, f"{path}: negative counts")
        checker.expect(float(r[2]) == voltage, f"{path}: voltage {r[2]} != {voltage}")
        checker.expect(r[3] == ("1" if is_ref else "0"), f"{path}: is_reference {r[3]}")
        checker.expect(int(r[4]) == seed, f"{path}: seed {r[4]} != {seed}")


def run(cli, *args):
    proc = subprocess.run([cli, *map(str, args)], capture_output=True, text=True)
    if proc.returncode != 0:
        sys.exit(f"{' '.join(map(str, args))} exited {proc.returncode}:\n{proc.stderr}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cli", required=True)
    ap.add_argument("--root", required=True, type=Path)
    ap.add_argument("--work", required=True, type=Path)
    args = ap.parse_args()

    checker = Checker(args.root / "schemas")
    shutil.rmtree(args.work, ignore_errors=True)
    args.work.mkdir(parents=True)

    for cfg in sorted((args.root / "configs").glob("*.json")):
        checker.validate(cfg, "config.schema.json")

    estimates = []
    for name in ["compound1", "compound2"]:
        scans = args.work / f"{name}_scans"
        fit = args.work / f"{name}_fit"
        run(args.cli, "simulate", "--config", args.root / "configs" / f"{name}.json", "--out-dir", scans)
        manifest = checker.validate(scans / "manifest.json", "manifest.schema.json")
        checker.validate(scans / manifest["config_file"], "config.schema.json")
        for pair in manifest["pairs"]:
            check_scan_csv(checker, scans / pair["signal"]["file"], manifest["scan_points"], pair["voltage_V"],
                           False, pair["signal"]["seed"])
            check_scan_csv(checker, scans / pair["reference"]["file"], manifest["scan_points"],
                           manifest["ref_voltage_V"], True, pair["reference"]["seed"])

        run(args.cli, "fit", "--scan-dir", scans, "--out-dir", fit)
        est = checker.validate(fit / "estimate.json", "estimate.schema.json")
        header, rows = read_csv(fit / "chi_per_voltage.csv")
        checker.expect(header == CHI_HEADER, f"chi table header {header}")
        checker.expect(len(rows) == len(est["per_voltage"]), "chi table row count")
        for r, pv in zip(rows, est["per_voltage"]):
            checker.expect(float(r[0]) == pv["voltage_V"], f"chi table voltage {r[0]}")
            checker.expect(r[3] == ("true" if pv["included"] else "false"), f"chi table included {r[3]}")
        estimates.append(fit / "estimate.json")

    run(args.cli, "report", *estimates, "--out-dir", args.work / "report")
    checker.validate(args.work / "report" / "report.json", "report.schema.json")

    cal = args.work / "c60"
    run(args.cli, "simulate", "--config", args.root / "configs" / "c60_calibration.json", "--out-dir", cal)
    run(args.cli, "calibrate", "--scan-dir", cal, "--known-chi", 88.9, "--out-dir", cal)
    checker.validate(cal / "deflector.json", "deflector.schema.json")

    for f in checker.failures:
        print(f, file=sys.stderr)
    return 1 if checker.failures else 0


if __name__ == "__main__":
    sys.exit(main())
