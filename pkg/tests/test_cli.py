"""End-to-end checks of the command-line workflows."""

import json

import pytest

from fragflow.cli import ConfigError, main, resolve_options
from fragflow.denoiser import load_params
from fragflow.molgraph import parse_smiles, validate_valence, write_smiles
from fragflow.tokenizer import Vocab, _lex


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus.smi"
    model = root / "model"
    assert main(["corpus-gen", f"out={corpus}", "count=120", "seed=1"]) == 0
    assert main(["train", f"corpus={corpus}", f"outdir={model}",
                 "dim=16", "blocks=1", "epochs=25", "seed=0"]) == 0
    return {"root": root, "corpus": corpus, "model": model}


def test_corpus_gen_output(workspace):
    lines = workspace["corpus"].read_text().splitlines()
    assert len(lines) == 120 == len(set(lines))
    for line in lines:
        assert 8 <= len(_lex(line)) <= 40
        graph = parse_smiles(line)
        assert validate_valence(graph)
        assert write_smiles(graph) == line  # stored in canonical form


def test_corpus_gen_rerun_from_resolved_config(workspace):
    cfg = workspace["root"] / "corpus-gen.resolved.cfg"
    assert cfg.exists()
    before = workspace["corpus"].read_bytes()
    assert main(["corpus-gen", "--config", str(cfg)]) == 0
    assert workspace["corpus"].read_bytes() == before


def test_train_outputs(workspace):
    model = workspace["model"]
    vocab = Vocab.load(model / "vocab.txt")
    params = load_params(model / "params.bin")
    assert params.vocab_size == len(vocab)
    dist = json.loads((model / "lengths.json").read_text())
    assert all(8 <= int(k) <= 40 for k in dist)
    assert (model / "train.resolved.cfg").exists()


def test_sample_writes_and_is_seeded(workspace):
    model, root = workspace["model"], workspace["root"]
    out = root / "samples.txt"
    args = [f"model={model}", f"out={out}", "count=25", "h=0.1", "seed=3"]
    assert main(["sample"] + args) == 0
    first = out.read_text()
    assert len(first.splitlines()) == 25
    assert main(["sample"] + args) == 0
    assert out.read_text() == first
    assert main(["sample"] + args[:-1] + ["seed=4"]) == 0
    assert out.read_text() != first


def test_sample_fully_constrained_mask(workspace):
    model, root = workspace["model"], workspace["root"]
    mask = root / "mask.txt"
    mask.write_text("CCOCC\n")
    out = root / "masked.txt"
    assert main(["sample", f"model={model}", f"out={out}", "count=10",
                 f"mask_file={mask}", "h=0.1", "seed=0"]) == 0
    assert set(out.read_text().splitlines()) == {"CCOCC"}


def test_overfit_single_molecule(tmp_path):
    corpus = tmp_path / "one.smi"
    corpus.write_text("CCOCC\n" * 32)
    model = tmp_path / "model"
    assert main(["train", f"corpus={corpus}", f"outdir={model}", "dim=16",
                 "blocks=1", "epochs=1200", "lr=3e-3", "batch_size=32",
                 "seed=0"]) == 0
    for mode in ("velocity", "refine"):
        out = tmp_path / f"{mode}.txt"
        assert main(["sample", f"model={model}", f"out={out}", "count=100",
                     f"mode={mode}", "h=0.01", "seed=1"]) == 0
        lines = out.read_text().splitlines()
        assert sum(s == "CCOCC" for s in lines) / len(lines) >= 0.99


def test_constrain_pins_prefix(workspace):
    model, root = workspace["model"], workspace["root"]
    frag = root / "frag.txt"
    frag.write_text("CCO\n")
    out = root / "constrained.txt"
    assert main(["constrain", f"model={model}", f"fragment_file={frag}",
                 f"out={out}", "count=12", "extra=5", "h=0.1", "seed=2"]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 12
    for line in lines:
        assert [tok for tok, _ in _lex(line)][:3] == ["C", "C", "O"]


def test_eval_denovo_scan(workspace):
    model, root = workspace["model"], workspace["root"]
    out = root / "scan.csv"
    assert main(["eval-denovo", f"model={model}", f"out={out}",
                 "temperatures=1.0,1.5", "noises=0.0,0.3", "hs=0.1",
                 "n_samples=20", "quality=surrogate",
                 f"corpus={workspace['corpus']}", "seed=0"]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "T0,r,h,validity,uniqueness,diversity,quality,n_samples,seed"
    assert len(lines) == 1 + 4
    for line in lines[1:]:
        cells = line.split(",")
        assert len(cells) == 9
        assert all(0.0 <= float(c) <= 1.0 for c in cells[3:7])


def test_optimize_history_and_rerun(workspace):
    model, root = workspace["model"], workspace["root"]
    pre = root / "prescreen.smi"
    pre.write_text("CCO\nCCC\nCCCC\nCCN\nCCOC\n")
    out = root / "history.jsonl"
    args = ["optimize", f"model={model}", f"out={out}", "budget=40",
            "batch_size=16", "n_mutations=4", "h=0.1",
            f"prescreen_file={pre}", "ppo_epochs=2", "ppo_timesteps=8",
            "ppo_update_every=30", "seed=4"]
    assert main(args) == 0
    entries = [json.loads(line) for line in out.read_text().splitlines()]
    paid = [e for e in entries if e["call"] > 0]
    assert len(paid) <= 40
    assert [e["call"] for e in paid] == list(range(1, len(paid) + 1))
    assert {e["source"] for e in entries} <= {"prescreen", "offspring",
                                              "mutation"}
    assert len(paid) > 0  # prescreen seeds mutations, so paid calls happen
    ranked = (root / "history.ranked.csv").read_text().splitlines()
    assert ranked[0] == "smiles,score"
    assert len(ranked) > 1
    first = out.read_bytes()
    assert main(args) == 0
    assert out.read_bytes() == first


def test_optimize_external_oracle(workspace, tmp_path):
    model = workspace["model"]
    scorer = tmp_path / "scorer.py"
    scorer.write_text(
        "import json, sys\n"
        "for line in sys.stdin:\n"
        "    req = json.loads(line)\n"
        "    out = {'id': req['id'],\n"
        "           'scores': [0.5] * len(req['smiles'])}\n"
        "    print(json.dumps(out), flush=True)\n")
    pre = tmp_path / "pre.smi"
    pre.write_text("CCO\nCCC\n")
    out = tmp_path / "history.jsonl"
    assert main(["optimize", f"model={model}", f"out={out}",
                 "oracle=external", f"oracle_cmd=python3 {scorer}",
                 "budget=10", "batch_size=8", "n_mutations=2", "h=0.1",
                 f"prescreen_file={pre}", "enable_ppo=false", "seed=0"]) == 0
    entries = [json.loads(line) for line in out.read_text().splitlines()]
    assert entries and all(e["score"] == 0.5 for e in entries)


def test_bandit_demo_csv(workspace):
    out = workspace["root"] / "bandit.csv"
    assert main(["bandit-demo", f"out={out}", "updates=500", "seed=0"]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "arm,visits,best,quantile,probability"
    assert len(lines) == 1 + 21
    probs = [float(line.split(",")[4]) for line in lines[1:]]
    assert abs(sum(probs) - 1.0) < 1e-3
    modal = max(lines[1:], key=lambda l: float(l.split(",")[4]))
    assert abs(int(modal.split(",")[0]) - 20) <= 2


def test_diagnostics_csv(workspace):
    model, root = workspace["model"], workspace["root"]
    out = root / "diag.csv"
    assert main(["diagnostics", f"model={model}", f"out={out}", "count=5",
                 "mode=refine", "h=0.1", "seed=1"]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "step,t,mean_changes,cumulative_changes,mean_confidence"
    assert len(lines) == 1 + 10
    cumulative = [float(line.split(",")[3]) for line in lines[1:]]
    assert cumulative == sorted(cumulative)


def test_exit_codes(workspace, tmp_path):
    model = workspace["model"]
    assert main([]) == 2
    assert main(["--help"]) == 0
    assert main(["frobnicate"]) == 2
    assert main(["corpus-gen", f"out={tmp_path/'x.smi'}", "bogus=1"]) == 2
    assert main(["corpus-gen", f"out={tmp_path/'x.smi'}", "count=ten"]) == 2
    assert main(["train", f"outdir={tmp_path/'m'}"]) == 2
    assert main(["train", "corpus=/nonexistent.smi",
                 f"outdir={tmp_path/'m'}"]) == 3
    assert main(["sample", f"model={model}", f"out={tmp_path/'x.txt'}",
                 "h=-1"]) == 4
    cfg = workspace["root"] / "corpus-gen.resolved.cfg"
    assert main(["train", "--config", str(cfg)]) == 2


def test_resolve_options_layering(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\ncount=7\nseed=9\n")
    values = resolve_options("corpus-gen", str(cfg), ["seed=11", "out=x.smi"])
    assert values["count"] == 7       # from file
    assert values["seed"] == 11       # override beats file
    assert values["min_tokens"] == 8  # default
    with pytest.raises(ConfigError):
        resolve_options("corpus-gen", None, ["not-a-pair"])
