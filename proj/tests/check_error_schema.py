# Copyright (C) 2026 The tvla Authors
# SPDX-License-Identifier: Apache-2.0
"""Runs failing tvla invocations and validates their stderr against docs/error.schema.json."""

import json
import pathlib
import re
import subprocess
import sys
import tempfile

import jsonschema


def main() -> int:
    tvla, source = sys.argv[1], pathlib.Path(sys.argv[2])
    schema = json.loads((source / "docs" / "error.schema.json").read_text())
    jsonschema.Draft202012Validator.check_schema(schema)
    validator = jsonschema.Draft202012Validator(schema)

    header = (source / "include" / "tvla" / "error.hpp").read_text()
    body = re.search(r"enum class ErrorCode \{(.*?)\};", header, re.S).group(1)
    codes = set(re.findall(r"(\w+),", body)) | {"runtime"}
    listed = set(schema["properties"]["error"]["properties"]["code"]["enum"])
    if codes != listed:
        print(f"schema code enum differs from ErrorCode: missing {codes - listed}, extra {listed - codes}")
        return 1

    fixture = source / "tests" / "fixtures" / "cli"
    failures = 0
    with tempfile.TemporaryDirectory() as tmp:
        tmp = pathlib.Path(tmp)
        (tmp / "unknown.json").write_text('{"schema_version": 1, "train": {"learnin_rate": 0.1}}')
        (tmp / "res16.json").write_text('{"schema_version": 1, "codec": {"resolution": 16}}')
        (tmp / "broken.json").write_text('{"schema_version": 1,')
        cases = [
            (2, ["train", "--config", str(tmp / "unknown.json"), "--data", str(fixture / "data"), "--out", str(tmp / "r")]),
            (2, ["ablate", "--plan", str(tmp / "broken.json")]),
            (2, ["eval", "--checkpoint", str(fixture / "model.ckpt")]),
            (2, ["no-such-command"]),
            (3, ["eval", "--checkpoint", str(tmp / "absent.ckpt"), "--data", str(fixture / "data")]),
            (3, ["infer", "--checkpoint", str(fixture / "model.ckpt"), "--data", str(fixture / "data"),
                 "--episode", "0", "--frame", "100000"]),
            (4, ["train", "--config", str(tmp / "res16.json"), "--data", str(fixture / "data"), "--out", str(tmp / "r")]),
        ]
        for expected, args in cases:
            proc = subprocess.run([tvla, *args], capture_output=True, text=True)
            label = " ".join(args[:1])
            try:
                report = json.loads(proc.stderr)
                validator.validate(report)
            except (json.JSONDecodeError, jsonschema.ValidationError) as e:
                print(f"FAIL {label}: {e}\nstderr: {proc.stderr!r}")
                failures += 1
                continue
            if proc.returncode != expected or report["error"]["exit_code"] != expected:
                print(f"FAIL {label}: exit {proc.returncode}, reported {report['error']['exit_code']}, want {expected}")
                failures += 1
                continue
            print(f"ok   {label}: {report['error']['code']} (exit {expected})")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
