#!/usr/bin/env python3
"""Validate JSON documents against the schemas in schemas/.

usage: validate_json.py SCHEMA_DIR SCHEMA_NAME FILE [FILE...]
"""
import json
import pathlib
import sys

import jsonschema
from referencing import Registry, Resource


def main(argv):
    if len(argv) < 4:
        print(__doc__.strip(), file=sys.stderr)
        return 2
    schema_dir = pathlib.Path(argv[1])
    registry = Registry()
    for path in sorted(schema_dir.glob("*.schema.json")):
        doc = json.loads(path.read_text())
        registry = registry.with_resource(path.name, Resource.from_contents(doc))
        registry = registry.with_resource(doc["$id"], Resource.from_contents(doc))
    schema = json.loads((schema_dir / f"{argv[2]}.schema.json").read_text())
    cls = jsonschema.validators.validator_for(schema)
    cls.check_schema(schema)
    validator = cls(schema, registry=registry)
    failed = 0
    for name in argv[3:]:
        doc = json.loads(pathlib.Path(name).read_text())
        errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
        for e in errors[:20]:
            loc = "/".join(str(p) for p in e.absolute_path)
            print(f"{name}: /{loc}: {e.message}", file=sys.stderr)
        if errors:
            failed += 1
        else:
            print(f"{name}: ok")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
