"""Validate every record a run directory holds against the schemas in schemas/."""
import json
import pathlib
import sys

import jsonschema


def load(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def main(schema_dir, run_dirs):
    schema_dir = pathlib.Path(schema_dir)
    schemas = {p.name.removesuffix(".json"): load(p) for p in schema_dir.glob("*.v1.json")}

    def check(record, name, where):
        try:
            jsonschema.validate(record, schemas[name + ".v1"])
        except jsonschema.ValidationError as e:
            sys.exit(f"{where}: {e.message}")

    checked = 0
    for run in map(pathlib.Path, run_dirs):
        for fname, schema in [("manifest.json", "manifest"), ("partition.json", "partition"),
                              ("metrics_phase1.json", "metrics"), ("metrics_phase2.json", "metrics")]:
            path = run / fname
            if path.exists():
                check(load(path), schema, path)
                checked += 1
        for fname, schema in [("rounds.jsonl", "round_report"), ("phase2_reports.jsonl", "phase2_report")]:
            path = run / fname
            if not path.exists():
                continue
            for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
                check(json.loads(line), schema, f"{path}:{lineno}")
                checked += 1
        manifest = run / "manifest.json"
        if manifest.exists():
            check(load(manifest)["config"], "config", f"{manifest} (config)")
    if checked == 0:
        sys.exit("no records found")
    print(f"{checked} records valid")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2:])
