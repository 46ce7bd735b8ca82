"""Validates every *.scene.json in a directory against the scene schema."""
import json
import pathlib
import sys

import jsonschema

schema = json.loads(pathlib.Path(sys.argv[1]).read_text())
scenes = sorted(pathlib.Path(sys.argv[2]).glob("*.scene.json"))
expected = int(sys.argv[3])
validator = jsonschema.Draft202012Validator(schema)
bad = 0
for path in scenes:
    errors = list(validator.iter_errors(json.loads(path.read_text())))
    for e in errors[:3]:
        print(f"{path.name}: {e.json_path}: {e.message}")
    bad += bool(errors)
print(f"{len(scenes) - bad}/{len(scenes)} scenes valid")
sys.exit(0 if bad == 0 and len(scenes) == expected else 1)
