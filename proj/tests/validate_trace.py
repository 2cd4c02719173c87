#!/usr/bin/env python3
# Copyright 2026 The AnyExperts Authors
# SPDX-License-Identifier: Apache-2.0
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Trains a tiny model with the CLI, exports a trace and validates every record."""

import json
import math
import subprocess
import sys
import tempfile
from pathlib import Path

import jsonschema

CONFIG = """seed = 2
steps = 10
k_min = 2
k_max = 4
e_real = 4
e_virtual = 2
rho_max = 0.34
d = 8
d_ff = 8
vocab = 32
seq_len = 12
n_sequences = 4
eval_sequences = 3
baseline_ks = 2
"""


def main(cli: str, schema_path: str) -> int:
    schema = json.loads(Path(schema_path).read_text())
    jsonschema.Draft202012Validator.check_schema(schema)
    validator = jsonschema.Draft202012Validator(schema)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        (tmp / "run.cfg").write_text(CONFIG)
        subprocess.run([cli, "train", "--config", str(tmp / "run.cfg"), "--out", str(tmp / "run")],
                       check=True)
        subprocess.run([cli, "trace", "--checkpoint", str(tmp / "run" / "checkpoint.bin"),
                        "--seed", "17", "--out", str(tmp / "trace.jsonl")], check=True)
        records = [json.loads(line) for line in (tmp / "trace.jsonl").read_text().splitlines()]

    errors = 0
    for i, rec in enumerate(records):
        for err in validator.iter_errors(rec):
            print(f"record {i}: {err.message}")
            errors += 1
    tokens = [r for r in records if r["record"] == "token"]
    spans = [r for r in records if r["record"] == "span"]
    if len(tokens) != 3 * 12 or len(spans) != 3:
        print(f"unexpected record counts: {len(tokens)} tokens, {len(spans)} spans")
        errors += 1
    for s in spans:
        members = [t["w"] for t in tokens
                   if t["sequence"] == s["sequence"] and s["start"] <= t["position"] < s["start"] + s["length"]]
        if len(members) != s["length"] or not math.isclose(sum(members), s["sum_w"], rel_tol=1e-12):
            print(f"span {s} does not match its tokens")
            errors += 1
    for t in tokens:
        if t["k_real"] > t["k_hat"]:
            print(f"token {t} has more real experts than slots")
            errors += 1
        if not t["informative"] and t["modality"] != "imagelike":
            print(f"token {t} is redundant outside an imagelike span")
            errors += 1
    print(f"{len(records)} records checked, {errors} problems")
    return 1 if errors else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1], sys.argv[2]))
