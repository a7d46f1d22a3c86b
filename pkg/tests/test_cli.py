import csv
import json
import shutil
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "scripts"))
from regen_goldens import ANNEAL_ARGS, EVAL_ARGS  # noqa: E402

from anneal_decode.cli import main  # noqa: E402
from anneal_decode.schedules import exponential, temperature_at  # noqa: E402

HERE = Path(__file__).parent
GOLDEN = HERE / "golden"
FIXTURE = HERE / "fixtures" / "vignettes8.jsonl"


def run(*args):
    return main([str(a) for a in args])


def trace_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_anneal_writes_trace(tmp_path):
    assert run(*ANNEAL_ARGS, "--out", tmp_path) == 0
    rows = trace_rows(tmp_path / "trace.csv")
    assert len(rows) == 50
    sched = exponential(0.90, 0.25, 50)
    assert float(rows[0]["tau"]) == temperature_at(sched, 1)
    assert float(rows[-1]["tau"]) == 0.25
    result = json.loads((tmp_path / "result.json").read_text())
    assert {"tokens", "logp", "seed", "text"} <= result.keys()
    assert result["seed"] == 1 and len(result["tokens"]) == 2


def test_anneal_matches_golden_trace(tmp_path):
    run(*ANNEAL_ARGS, "--out", tmp_path)
    assert (tmp_path / "trace.csv").read_bytes() == (GOLDEN / "trace.csv").read_bytes()


def test_zero_steps(tmp_path):
    assert run("anneal", "--backend", "tabular:M2", "--steps", 0, "--seed", 3, "--out", tmp_path) == 0
    assert trace_rows(tmp_path / "trace.csv") == []
    assert len(json.loads((tmp_path / "result.json").read_text())["tokens"]) == 2


def test_sample_defaults_to_constant(tmp_path):
    assert run("sample", "--backend", "tabular:M2prime", "--seed", 2, "--out", tmp_path) == 0
    rows = trace_rows(tmp_path / "trace.csv")
    assert len(rows) == 10 and {r["tau"] for r in rows} == {"0.25"}


@pytest.mark.parametrize("cmd", [
    ["anneal", "--backend", "tabular:M2", "--steps", 40],
    ["sample", "--backend", "tabular:M2prime", "--schedule", "const:0.5"],
])
def test_chain_bitwise_deterministic(tmp_path, cmd):
    for name in ("a", "b"):
        assert run(*cmd, "--seed", 11, "--out", tmp_path / name) == 0
    for f in ("trace.csv", "result.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_tabular_spec_file(tmp_path):
    spec = tmp_path / "M2.spec"
    spec.write_text(json.dumps({"vocab_size": 2, "length": 2,
                                "rows": {"": [0.75, 0.25], "0": [0.5, 0.5], "1": [0.9, 0.1]}}))
    assert run("anneal", "--backend", f"tabular:{spec}", "--steps", 5, "--seed", 1, "--out", tmp_path) == 0


def test_ngram_backend_with_prompt(tmp_path):
    corpus = tmp_path / "c.txt"
    corpus.write_text("the cat sat on the mat\nthe dog sat on the log\n" * 5)
    code = run("anneal", "--backend", f"ngram:{corpus}", "--order", 3, "--prompt", "the ",
               "--max-new-tokens", 32, "--blocks", 4, "--steps", 6, "--seed", 4, "--out", tmp_path)
    assert code == 0
    result = json.loads((tmp_path / "result.json").read_text())
    assert result["prompt_len"] == 4 and isinstance(result["text"], str)


def test_eval_golden(tmp_path):
    assert run(*EVAL_ARGS, "--out", tmp_path) == 0
    assert (tmp_path / "report.csv").read_bytes() == (GOLDEN / "report.csv").read_bytes()
    assert (tmp_path / "report.json").read_bytes() == (GOLDEN / "report.json").read_bytes()
    rows = trace_rows(tmp_path / "report.csv")
    assert len(rows) == 10
    assert {(r["strategy"], r["condition"]) for r in rows} == {
        (s, c) for s in ("direct", "cot", "power:0.25", "power:0.90", "anneal:exp:0.90:0.25") for c in ("TB", "FB")
    }


def test_eval_worker_count_irrelevant(tmp_path):
    args = [a if a != "1" else "3" for a in EVAL_ARGS]
    assert run(*args, "--out", tmp_path) == 0
    assert (tmp_path / "report.json").read_bytes() == (GOLDEN / "report.json").read_bytes()


def test_oracle_check(tmp_path, capsys):
    code = run("oracle-check", "--backend", "tabular:M2", "--alpha", 2, "--seed", 1, "--out", tmp_path)
    assert code == 0
    rep = json.loads((tmp_path / "oracle.json").read_text())
    assert rep["naive_marginal"][0] == pytest.approx(0.9, abs=1e-12)
    assert rep["correct_marginal"][0] == pytest.approx(0.84586, abs=1e-5)
    assert rep["stationarity_residual"] < 1e-9
    assert rep["tv"] <= 0.02
    assert all(rep["checks"].values())


def test_oracle_check_unit_alpha(capsys):
    assert run("oracle-check", "--backend", "tabular:M2", "--alpha", 1, "--chain-steps", 20000) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["naive_vs_correct_gap"] < 1e-12


def test_oracle_check_failure_exit(capsys):
    # a 50-step chain cannot meet a 1e-6 TV tolerance
    assert run("oracle-check", "--backend", "tabular:M2", "--chain-steps", 50, "--burn-in", 0,
               "--tv-tol", 1e-6) == 1


def test_plot(tmp_path):
    shutil.copy(GOLDEN / "trace.csv", tmp_path / "trace.csv")
    assert run("plot", tmp_path / "trace.csv") == 0
    svg = (tmp_path / "trace.svg").read_text()
    assert svg == (GOLDEN / "trace.svg").read_text()
    series = [line for line in svg.splitlines() if 'class="series"' in line]
    assert len(series) == 2
    for line in series:
        pts = line.split('points="')[1].split('"')[0].split()
        assert len(pts) == 50


def test_plot_empty_trace(tmp_path):
    trace = tmp_path / "empty.csv"
    trace.write_text((GOLDEN / "trace.csv").read_text().splitlines()[0] + "\n")
    assert run("plot", trace, "--out", tmp_path / "x.svg") == 1
    assert not (tmp_path / "x.svg").exists()


def test_plot_malformed_row(tmp_path, capsys):
    lines = (GOLDEN / "trace.csv").read_text().splitlines()
    lines[4] = lines[4].replace(",", ";", 2)
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    assert run("plot", bad) == 1
    assert "row 5" in capsys.readouterr().err


def test_config_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"steps": 7, "schedule": "const:0.5"}))
    run("--config", cfg, "anneal", "--backend", "tabular:M2", "--seed", 1, "--out", tmp_path / "a")
    rows = trace_rows(tmp_path / "a" / "trace.csv")
    assert len(rows) == 7 and rows[0]["tau"] == "0.5"
    run("--config", cfg, "anneal", "--backend", "tabular:M2", "--seed", 1, "--steps", 3, "--out", tmp_path / "b")
    assert len(trace_rows(tmp_path / "b" / "trace.csv")) == 3


def test_synth(tmp_path):
    assert run("synth", "--count", 8, "--seed", 5, "--out", tmp_path / "v.jsonl") == 0
    assert (tmp_path / "v.jsonl").read_bytes() == FIXTURE.read_bytes()


BASE = ["--backend", "tabular:M2"]


@pytest.mark.parametrize("argv,code", [
    (["anneal", *BASE, "--seed", "1", "--steps", "2"], 0),
    (["anneal", *BASE, "--steps", "2"], 2),  # seed required
    (["anneal", *BASE, "--seed", "1", "--schedule", "cosine:1"], 2),
    (["anneal", *BASE, "--seed", "1", "--max-new-tokens", "10", "--blocks", "3"], 2),
    (["anneal", "--backend", "bogus:x", "--seed", "1"], 2),
    (["anneal", "--backend", "tabular:/no/such.spec", "--seed", "1"], 1),
    (["eval", "--backend", "scripted:option0", "--vignettes", str(FIXTURE), "--seed", "0",
      "--strategies", "direct,greedy"], 2),
    (["eval", "--backend", "scripted:option0", "--vignettes", str(FIXTURE), "--strategies", "direct"], 2),
    (["eval", "--backend", "scripted:option0", "--vignettes", "/no/file.jsonl", "--seed", "0"], 1),
    (["oracle-check", "--backend", "scripted:option0"], 2),
    (["plot", "/no/trace.csv"], 1),
    (["frobnicate"], 2),
    ([], 2),
])
def test_exit_codes(tmp_path, argv, code):
    try:
        got = main(argv + (["--out", str(tmp_path / "o")] if argv and argv[0] in ("anneal", "eval") else []))
    except SystemExit as exc:
        got = exc.code
    assert got == code
