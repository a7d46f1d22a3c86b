"""Rebuild the golden files under tests/golden/.

Run after an intentional change to prompts, report layout, trace format or
the SVG renderer, then review the diff before committing.
"""
import shutil
import sys
import tempfile
from pathlib import Path

from anneal_decode.cli import main
from anneal_decode.harness import build_prompt, load_vignettes
from anneal_decode.sampler import parse_strategy

ROOT = Path(__file__).resolve().parents[1]
FIXTURE = ROOT / "tests" / "fixtures" / "vignettes8.jsonl"
GOLDEN = ROOT / "tests" / "golden"

# Invocations the tests replay; keep in sync with tests/test_cli.py.
EVAL_ARGS = ["eval", "--backend", "scripted:mixed", "--vignettes", str(FIXTURE),
             "--strategies", "direct,cot,power:0.25,power:0.90,anneal:exp:0.90:0.25",
             "--seed", "0", "--workers", "1"]
ANNEAL_ARGS = ["anneal", "--backend", "tabular:M2", "--schedule", "exp:0.90:0.25",
               "--steps", "50", "--seed", "1"]


def run(args, out):
    code = main(args + ["--out", str(out)])
    if code:
        sys.exit(f"{args[0]} exited with {code}")


def regen():
    GOLDEN.mkdir(exist_ok=True)
    v = next(x for x in load_vignettes(FIXTURE) if x.id == "tom-0001")
    (GOLDEN / "prompt_tom-0001_direct.txt").write_text(build_prompt(v, parse_strategy("direct")), encoding="utf-8")
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        run(EVAL_ARGS, tmp / "eval")
        shutil.copy(tmp / "eval" / "report.csv", GOLDEN / "report.csv")
        shutil.copy(tmp / "eval" / "report.json", GOLDEN / "report.json")
        run(ANNEAL_ARGS, tmp / "anneal")
        shutil.copy(tmp / "anneal" / "trace.csv", GOLDEN / "trace.csv")
    code = main(["plot", str(GOLDEN / "trace.csv"), "--out", str(GOLDEN / "trace.svg")])
    if code:
        sys.exit(f"plot exited with {code}")


if __name__ == "__main__":
    regen()
