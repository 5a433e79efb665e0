"""Command-line entry point wiring corpus prep, training, sampling,
evaluation, constrained generation and optimization into reproducible runs.

Options resolve in three layers: built-in defaults, then a plain-text
key=value config file (--config), then command-line overrides. Every run
writes its fully-resolved config next to its outputs so the exact run can
be reproduced with --config alone.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 module error.
"""

from __future__ import annotations

import json
import shlex
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .denoiser import init_params, load_params, save_params, train
from .metrics import auc_top10, quality_diversity_scan, scan_to_csv
from .molgraph import descriptors, parse_smiles, validate_valence, write_smiles
from .optimizer import (BanditState, OptimizeConfig, PPOConfig,
                        bandit_probabilities, bandit_sample, bandit_update,
                        optimize)
from .oracle import (ExternalScorer, FrequencyTable, carbon_fraction,
                     graph_from_notation, surrogate_qed, surrogate_sa)
from .sampler import ConstraintMask, REFINE, SampleConfig, VELOCITY, generate_batch
from .tokenizer import (LengthDist, Vocab, _lex, build_vocab, decode, encode,
                        length_distribution)


class ConfigError(Exception):
    """Bad option value, unknown key, or inconsistent configuration."""


class IoError(Exception):
    """A required file could not be read or an output could not be written."""


# ---------------------------------------------------------------------------
# option tables


@dataclass(frozen=True)
class Opt:
    name: str
    kind: str  # int | float | str | bool | ints | floats
    default: object
    help: str
    required: bool = False


_MODEL_OPTS = (
    Opt("model", "str", None, "directory holding vocab.txt/params.bin/lengths.json",
        required=True),
)

_SAMPLING_OPTS = (
    Opt("mode", "str", VELOCITY, "velocity or refine"),
    Opt("h", "float", 0.01, "integration step size"),
    Opt("temperature", "float", 1.0, "initial refinement temperature T0"),
    Opt("noise_scale", "float", 0.0, "initial Gumbel noise scale r"),
)

SUBCOMMANDS: dict[str, tuple[Opt, ...]] = {
    "corpus-gen": (
        Opt("out", "str", None, "output SMILES list, one molecule per line",
            required=True),
        Opt("count", "int", 5000, "number of distinct molecules"),
        Opt("min_tokens", "int", 8, "minimum encoded length"),
        Opt("max_tokens", "int", 40, "maximum encoded length"),
        Opt("seed", "int", 0, "RNG seed"),
    ),
    "train": (
        Opt("corpus", "str", None, "SMILES list, one molecule per line",
            required=True),
        Opt("outdir", "str", None, "directory for vocab/lengths/params",
            required=True),
        Opt("dim", "int", 64, "model width"),
        Opt("blocks", "int", 2, "residual block count"),
        Opt("epochs", "int", 10, "training epochs"),
        Opt("batch_size", "int", 16, "sequences per gradient step"),
        Opt("lr", "float", 1e-4, "learning rate"),
        Opt("weight_decay", "float", 0.01, "AdamW weight decay"),
        Opt("seed", "int", 0, "RNG seed"),
    ),
    "sample": _MODEL_OPTS + (
        Opt("out", "str", None, "output file of decoded samples", required=True),
        Opt("count", "int", 100, "number of samples"),
        Opt("length", "int", 0,
            "sequence length; 0 draws from lengths.json or fits the mask"),
        Opt("mask_file", "str", "", "optional token string pinned during sampling"),
        Opt("mask_start", "int", 0, "position where the pinned tokens begin"),
        Opt("seed", "int", 0, "RNG seed"),
    ) + _SAMPLING_OPTS,
    "eval-denovo": _MODEL_OPTS + (
        Opt("out", "str", None, "output CSV of scan rows", required=True),
        Opt("temperatures", "floats", (1.0,), "comma-separated T0 values"),
        Opt("noises", "floats", (0.0,), "comma-separated r values"),
        Opt("hs", "floats", (0.01,), "comma-separated step sizes"),
        Opt("n_samples", "int", 200, "samples per grid point"),
        Opt("quality", "str", "none", "quality gate: none or surrogate"),
        Opt("corpus", "str", "", "corpus for the surrogate SA table"),
        Opt("seed", "int", 0, "RNG seed"),
    ),
    "constrain": _MODEL_OPTS + (
        Opt("fragment_file", "str", None, "file whose first line is pinned",
            required=True),
        Opt("out", "str", None, "output file of decoded samples", required=True),
        Opt("count", "int", 100, "number of samples"),
        Opt("length", "int", 0, "total length; 0 means fragment + extra"),
        Opt("extra", "int", 8, "free positions appended when length=0"),
        Opt("seed", "int", 0, "RNG seed"),
    ) + _SAMPLING_OPTS,
    "optimize": _MODEL_OPTS + (
        Opt("out", "str", None, "history JSONL path", required=True),
        Opt("oracle", "str", "carbon-fraction",
            "carbon-fraction or external"),
        Opt("oracle_cmd", "str", "", "scorer command when oracle=external"),
        Opt("oracle_timeout", "float", 60.0, "external scorer timeout (s)"),
        Opt("budget", "int", 100, "paid oracle calls"),
        Opt("batch_size", "int", 80, "molecules proposed per iteration"),
        Opt("n_mutations", "int", 20, "mutations per iteration"),
        Opt("pop_size", "int", 100, "population capacity"),
        Opt("min_distance", "float", 0.7, "pairwise Tanimoto distance floor"),
        Opt("lengths", "ints", (), "candidate lengths; empty uses lengths.json"),
        Opt("h", "float", 0.01, "integration step size"),
        Opt("enable_ppo", "bool", True, "fine-tune the denoiser on rewards"),
        Opt("enable_bandit", "bool", True, "adapt the length distribution"),
        Opt("enable_mutation", "bool", True, "mutate the population elite"),
        Opt("prescreen_file", "str", "", "SMILES list scored before call 1"),
        Opt("ppo_update_every", "int", 100, "scored molecules per update"),
        Opt("ppo_epochs", "int", 10, "gradient epochs per update"),
        Opt("ppo_timesteps", "int", 50, "Monte-Carlo timesteps per sequence"),
        Opt("ppo_lr", "float", 1e-4, "update learning rate"),
        Opt("seed", "int", 0, "RNG seed"),
    ),
    "bandit-demo": (
        Opt("out", "str", None, "output CSV of arm statistics", required=True),
        Opt("min_arm", "int", 10, "smallest length arm"),
        Opt("max_arm", "int", 30, "largest length arm"),
        Opt("peak", "float", 20.0, "reward peak location"),
        Opt("width", "float", 2.0, "reward peak width"),
        Opt("updates", "int", 500, "sample/update rounds"),
        Opt("seed", "int", 0, "RNG seed"),
    ),
    "diagnostics": _MODEL_OPTS + (
        Opt("out", "str", None, "output CSV of per-step statistics",
            required=True),
        Opt("count", "int", 20, "trajectories to average over"),
        Opt("length", "int", 0, "sequence length; 0 draws from lengths.json"),
        Opt("seed", "int", 0, "RNG seed"),
    ) + _SAMPLING_OPTS,
}


# ---------------------------------------------------------------------------
# option resolution


def _coerce(opt: Opt, raw):
    if not isinstance(raw, str):
        return raw
    try:
        if opt.kind == "int":
            return int(raw)
        if opt.kind == "float":
            return float(raw)
        if opt.kind == "bool":
            low = raw.strip().lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(low)
        if opt.kind == "ints":
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if opt.kind == "floats":
            return tuple(float(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(
            f"option {opt.name}: cannot parse {raw!r} as {opt.kind}") from None


def _read_config(path: str) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot read config {path}: {e}") from None
    pairs = {}
    for ln, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise ConfigError(f"{path}:{ln}: expected key=value, got {s!r}")
        key, value = s.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def resolve_options(subcommand: str, config_path: Optional[str],
                    overrides: Sequence[str]) -> dict:
    """Defaults, then config file, then key=value overrides."""
    opts = SUBCOMMANDS[subcommand]
    table = {o.name: o for o in opts}
    raw: dict[str, str] = {}
    if config_path:
        raw.update(_read_config(config_path))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        raw[key.strip()] = value.strip()
    declared = raw.pop("subcommand", None)
    if declared is not None and declared != subcommand:
        raise ConfigError(
            f"config is for {declared!r}, not {subcommand!r}")
    values = {o.name: o.default for o in opts}
    for key, value in raw.items():
        if key not in table:
            raise ConfigError(f"unknown option {key!r} for {subcommand}")
        values[key] = _coerce(table[key], value)
    for o in opts:
        if o.required and values[o.name] is None:
            raise ConfigError(f"{subcommand} requires {o.name}=...")
    return values


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(v) if isinstance(v, float) else str(v)
                        for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_resolved(subcommand: str, values: dict, anchor: str) -> Path:
    """Persist the run's options next to its outputs, reloadable via --config."""
    directory = Path(anchor)
    if directory.suffix or not directory.is_dir():
        directory = directory.parent
    path = directory / f"{subcommand}.resolved.cfg"
    lines = [f"subcommand={subcommand}"]
    for key in sorted(values):
        if values[key] is None:
            continue
        lines.append(f"{key}={_format_value(values[key])}")
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from None
    return path


# ---------------------------------------------------------------------------
# shared helpers


def _read_lines(path: str, what: str) -> list[str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot read {what} {path}: {e}") from None
    return [line.strip() for line in text.splitlines() if line.strip()]


def _write_text(path: str, text: str) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from None


def _load_model(model_dir: str):
    root = Path(model_dir)
    try:
        vocab = Vocab.load(root / "vocab.txt")
        params = load_params(root / "params.bin")
    except OSError as e:
        raise IoError(f"cannot load model from {model_dir}: {e}") from None
    lengths = None
    lengths_path = root / "lengths.json"
    if lengths_path.exists():
        try:
            lengths = LengthDist.from_dict(
                json.loads(lengths_path.read_text(encoding="utf-8")))
        except OSError as e:
            raise IoError(f"cannot read {lengths_path}: {e}") from None
    if params.vocab_size != len(vocab):
        raise ConfigError(
            f"params expect vocabulary size {params.vocab_size}, "
            f"vocab.txt has {len(vocab)}")
    return params, vocab, lengths


def _resolve_length(values: dict, lengths: Optional[LengthDist]):
    if values["length"] > 0:
        return values["length"]
    if lengths is None:
        raise ConfigError("length=0 needs lengths.json in the model directory")
    return lengths


def _sample_config(values: dict, length, mask=None) -> SampleConfig:
    mode = values["mode"]
    if mode not in (VELOCITY, REFINE):
        raise ConfigError(f"mode must be {VELOCITY} or {REFINE}, got {mode!r}")
    return SampleConfig(mode=mode, h=values["h"],
                        temperature=values["temperature"],
                        noise_scale=values["noise_scale"],
                        length=length, mask=mask)


# ---------------------------------------------------------------------------
# corpus-gen

#: chain pieces whose first and last atoms keep a spare bond when joined
_TEMPLATES = (
    "C", "CC", "CCC", "CO", "CN", "CCO", "CCN", "CS",
    "C(C)C", "C(=O)N", "C(=O)O", "C=C", "CC(C)C",
    "c1ccccc1", "C1CCCCC1", "c1ccncc1", "C1CCNCC1", "C1CCOC1",
)


def _assemble(rng: np.random.Generator, target: int) -> str:
    parts = [_TEMPLATES[rng.integers(len(_TEMPLATES))]]
    tokens = len(_lex(parts[0]))
    while tokens < target:
        piece = _TEMPLATES[rng.integers(len(_TEMPLATES))]
        parts.append(piece)
        tokens += len(_lex(piece))
    return "".join(parts)


def cmd_corpus_gen(values: dict) -> None:
    if not 1 <= values["min_tokens"] <= values["max_tokens"]:
        raise ConfigError("need 1 <= min_tokens <= max_tokens")
    rng = np.random.default_rng(values["seed"])
    seen: dict[str, None] = {}
    attempts = 0
    limit = values["count"] * 400
    while len(seen) < values["count"]:
        attempts += 1
        if attempts > limit:
            raise ConfigError(
                f"generated only {len(seen)} distinct molecules in "
                f"{limit} attempts; widen the token range")
        target = int(rng.integers(values["min_tokens"],
                                  values["max_tokens"] + 1))
        text = _assemble(rng, target)
        if not values["min_tokens"] <= len(_lex(text)) <= values["max_tokens"]:
            continue
        try:
            graph = parse_smiles(text)
        except ValueError:
            continue
        if not validate_valence(graph):
            continue
        canonical = write_smiles(graph)
        if values["min_tokens"] <= len(_lex(canonical)) <= values["max_tokens"]:
            seen.setdefault(canonical, None)
    _write_text(values["out"], "\n".join(seen) + "\n")
    write_resolved("corpus-gen", values, values["out"])
    print(f"wrote {len(seen)} molecules to {values['out']}")


# ---------------------------------------------------------------------------
# train


def cmd_train(values: dict) -> None:
    corpus = _read_lines(values["corpus"], "corpus")
    if not corpus:
        raise ConfigError(f"corpus {values['corpus']} is empty")
    vocab = build_vocab(corpus)
    seqs = [encode(s, vocab) for s in corpus]
    dist = length_distribution(corpus, vocab)
    rng = np.random.default_rng(values["seed"])
    params = init_params(len(vocab), dim=values["dim"],
                         n_blocks=values["blocks"], rng=rng)
    params = train(params, seqs, epochs=values["epochs"], lr=values["lr"],
                   rng=rng, batch_size=values["batch_size"],
                   weight_decay=values["weight_decay"])
    outdir = Path(values["outdir"])
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        vocab.save(outdir / "vocab.txt")
        (outdir / "lengths.json").write_text(
            json.dumps(dist.to_dict(), sort_keys=True), encoding="utf-8")
        save_params(params, outdir / "params.bin")
    except OSError as e:
        raise IoError(f"cannot write model to {outdir}: {e}") from None
    write_resolved("train", values, str(outdir))
    print(f"trained vocab={len(vocab)} sequences={len(seqs)} -> {outdir}")


# ---------------------------------------------------------------------------
# sample / constrain


def _decode_batch(params, vocab, cfg, count, seed) -> list[str]:
    rng = np.random.default_rng(seed)
    seqs, _ = generate_batch(params, cfg, rng, count, collect_stats=False)
    return [decode(s, vocab) for s in seqs]


def cmd_sample(values: dict) -> None:
    params, vocab, lengths = _load_model(values["model"])
    mask = None
    if values["mask_file"]:
        pinned = _read_lines(values["mask_file"], "mask")[0]
        try:
            ids = encode(pinned, vocab).active()
        except ValueError as e:
            raise ConfigError(f"mask does not encode: {e}") from None
        start = values["mask_start"]
        mask = ConstraintMask.from_dict(
            {start + i: int(v) for i, v in enumerate(ids)})
        if values["length"] > 0 and values["length"] < start + len(ids):
            raise ConfigError(f"length {values['length']} too short for mask "
                              f"ending at {start + len(ids)}")
        length = values["length"] if values["length"] > 0 else start + len(ids)
    else:
        length = _resolve_length(values, lengths)
    cfg = _sample_config(values, length, mask)
    texts = _decode_batch(params, vocab, cfg, values["count"], values["seed"])
    _write_text(values["out"], "\n".join(texts) + "\n")
    write_resolved("sample", values, values["out"])
    print(f"wrote {len(texts)} samples to {values['out']}")


def cmd_constrain(values: dict) -> None:
    params, vocab, _ = _load_model(values["model"])
    fragment = _read_lines(values["fragment_file"], "fragment")[0]
    try:
        ids = encode(fragment, vocab).active()
    except ValueError as e:
        raise ConfigError(f"fragment does not encode: {e}") from None
    length = values["length"] if values["length"] > 0 \
        else len(ids) + values["extra"]
    if length < len(ids):
        raise ConfigError(f"length {length} shorter than fragment ({len(ids)})")
    mask = ConstraintMask.from_dict({i: int(v) for i, v in enumerate(ids)})
    cfg = _sample_config(values, length, mask)
    texts = _decode_batch(params, vocab, cfg, values["count"], values["seed"])
    _write_text(values["out"], "\n".join(texts) + "\n")
    write_resolved("constrain", values, values["out"])
    print(f"wrote {len(texts)} constrained samples to {values['out']}")


# ---------------------------------------------------------------------------
# eval-denovo


def cmd_eval_denovo(values: dict) -> None:
    params, vocab, lengths = _load_model(values["model"])
    if lengths is None:
        raise ConfigError("eval-denovo needs lengths.json in the model directory")
    scorer = None
    oracle_name = "none"
    if values["quality"] == "surrogate":
        if not values["corpus"]:
            raise ConfigError("quality=surrogate needs corpus=...")
        graphs = []
        for line in _read_lines(values["corpus"], "corpus"):
            g = graph_from_notation(line)
            if g is not None:
                graphs.append(g)
        table = FrequencyTable.from_graphs(graphs)
        scorer = lambda g: (surrogate_qed(descriptors(g)),
                            surrogate_sa(g, table))
        oracle_name = "surrogate"
    elif values["quality"] != "none":
        raise ConfigError(f"quality must be none or surrogate, "
                          f"got {values['quality']!r}")
    grid = [(t0, r) for t0 in values["temperatures"] for r in values["noises"]]
    if not grid or not values["hs"]:
        raise ConfigError("temperatures, noises and hs must be non-empty")
    rows = []
    for h in values["hs"]:
        base = SampleConfig(mode=REFINE, h=h, length=lengths)
        rows.extend(quality_diversity_scan(
            params, vocab, grid, base, values["n_samples"], scorer,
            oracle_name, seed=values["seed"]))
    Path(values["out"]).parent.mkdir(parents=True, exist_ok=True)
    try:
        scan_to_csv(rows, values["out"])
    except OSError as e:
        raise IoError(f"cannot write {values['out']}: {e}") from None
    write_resolved("eval-denovo", values, values["out"])
    print(f"wrote {len(rows)} scan rows to {values['out']}")


# ---------------------------------------------------------------------------
# optimize


def cmd_optimize(values: dict) -> None:
    params, vocab, dist = _load_model(values["model"])
    lengths = list(values["lengths"])
    if not lengths:
        if dist is None:
            raise ConfigError("no lengths given and no lengths.json in model")
        lengths = [int(n) for n in dist.lengths]
    prescreen = ()
    if values["prescreen_file"]:
        prescreen = tuple(_read_lines(values["prescreen_file"], "prescreen"))
    ppo = PPOConfig(epochs=values["ppo_epochs"], lr=values["ppo_lr"],
                    timesteps=values["ppo_timesteps"],
                    update_every=values["ppo_update_every"])
    try:
        cfg = OptimizeConfig(
            vocab=vocab, lengths=lengths, budget=values["budget"],
            batch_size=values["batch_size"], n_mutations=values["n_mutations"],
            pop_size=values["pop_size"], min_distance=values["min_distance"],
            h=values["h"], ppo=ppo, enable_ppo=values["enable_ppo"],
            enable_bandit=values["enable_bandit"],
            enable_mutation=values["enable_mutation"], prescreen=prescreen)
    except ValueError as e:
        raise ConfigError(str(e)) from None

    client = None
    if values["oracle"] == "carbon-fraction":
        oracle: Callable[[str], Optional[float]] = carbon_fraction
    elif values["oracle"] == "external":
        if not values["oracle_cmd"]:
            raise ConfigError("oracle=external needs oracle_cmd=...")
        client = ExternalScorer(shlex.split(values["oracle_cmd"]),
                                timeout=values["oracle_timeout"])
        oracle = client
    else:
        raise ConfigError(f"oracle must be carbon-fraction or external, "
                          f"got {values['oracle']!r}")
    try:
        result = optimize(params, oracle, cfg,
                          np.random.default_rng(values["seed"]))
    finally:
        if client is not None:
            client.close()

    lines = [json.dumps(entry, sort_keys=True) for entry in result.history]
    _write_text(values["out"], "\n".join(lines) + ("\n" if lines else ""))
    ranked_path = Path(values["out"]).with_suffix(".ranked.csv")
    ranked_lines = ["smiles,score"]
    ranked_lines += [f"{s},{v!r}" for s, v in result.ranked[:values["pop_size"]]]
    _write_text(str(ranked_path), "\n".join(ranked_lines) + "\n")
    write_resolved("optimize", values, values["out"])
    paid = [e for e in result.history if e["call"] > 0]
    auc = auc_top10(result.history, values["budget"]) if paid else 0.0
    best = result.ranked[0] if result.ranked else ("", 0.0)
    print(f"calls={result.calls_made} best={best[0]} score={best[1]:.4f} "
          f"auc_top10={auc:.4f}")


# ---------------------------------------------------------------------------
# bandit-demo


def cmd_bandit_demo(values: dict) -> None:
    if values["min_arm"] > values["max_arm"]:
        raise ConfigError("need min_arm <= max_arm")
    if values["width"] <= 0:
        raise ConfigError("width must be positive")
    rng = np.random.default_rng(values["seed"])
    state = BanditState(range(values["min_arm"], values["max_arm"] + 1))
    for _ in range(values["updates"]):
        arm = bandit_sample(state, rng)
        reward = float(np.exp(-((arm - values["peak"]) ** 2)
                              / (2 * values["width"] ** 2)))
        bandit_update(state, arm, reward)
    probs = bandit_probabilities(state)
    lines = ["arm,visits,best,quantile,probability"]
    for i, arm in enumerate(state.lengths):
        lines.append(f"{arm},{int(state.visits[i])},{state.best[i]:.6f},"
                     f"{state.quant[i]:.6f},{probs[i]:.6f}")
    _write_text(values["out"], "\n".join(lines) + "\n")
    write_resolved("bandit-demo", values, values["out"])
    modal = state.lengths[int(np.argmax(probs))]
    print(f"modal arm {modal} after {values['updates']} updates")


# ---------------------------------------------------------------------------
# diagnostics


def cmd_diagnostics(values: dict) -> None:
    params, _, lengths = _load_model(values["model"])
    length = _resolve_length(values, lengths)
    cfg = _sample_config(values, length)
    rng = np.random.default_rng(values["seed"])
    _, stats = generate_batch(params, cfg, rng, values["count"])
    steps = max(len(s.rows) for s in stats)
    lines = ["step,t,mean_changes,cumulative_changes,mean_confidence"]
    cumulative = 0.0
    for step in range(steps):
        rows = [s.rows[step] for s in stats if len(s.rows) > step]
        t = rows[0][1]
        mean_changes = float(np.mean([r[2] for r in rows]))
        cumulative += mean_changes
        conf = float(np.mean([r[3] for r in rows]))
        lines.append(f"{step},{t:.6f},{mean_changes:.6f},"
                     f"{cumulative:.6f},{conf:.6f}")
    _write_text(values["out"], "\n".join(lines) + "\n")
    write_resolved("diagnostics", values, values["out"])
    total = float(np.mean([s.total_changes() for s in stats]))
    print(f"wrote {steps} steps to {values['out']} "
          f"(mean total changes {total:.1f})")


_HANDLERS = {
    "corpus-gen": cmd_corpus_gen,
    "train": cmd_train,
    "sample": cmd_sample,
    "eval-denovo": cmd_eval_denovo,
    "constrain": cmd_constrain,
    "optimize": cmd_optimize,
    "bandit-demo": cmd_bandit_demo,
    "diagnostics": cmd_diagnostics,
}


# ---------------------------------------------------------------------------
# entry point


def _usage() -> str:
    out = ["usage: fragflow <subcommand> [--config FILE] [key=value ...]", "",
           "subcommands:"]
    for name, opts in SUBCOMMANDS.items():
        out.append(f"  {name}")
        for o in opts:
            default = "" if o.required else f" (default {_format_value(o.default)})"
            out.append(f"      {o.name}=<{o.kind}>  {o.help}{default}")
    return "\n".join(out)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = list(sys.argv[1:] if argv is None else argv)
    if not args:
        print(_usage(), file=sys.stderr)
        return 2
    if args[0] in ("-h", "--help"):
        print(_usage())
        return 0
    subcommand, rest = args[0], args[1:]
    if subcommand not in SUBCOMMANDS:
        print(f"unknown subcommand {subcommand!r}\n\n{_usage()}",
              file=sys.stderr)
        return 2
    config_path = None
    overrides = []
    i = 0
    while i < len(rest):
        if rest[i] == "--config":
            if i + 1 >= len(rest):
                print("--config needs a path", file=sys.stderr)
                return 2
            config_path = rest[i + 1]
            i += 2
        elif rest[i] in ("-h", "--help"):
            print(_usage())
            return 0
        else:
            overrides.append(rest[i])
            i += 1
    try:
        values = resolve_options(subcommand, config_path, overrides)
        _HANDLERS[subcommand](values)
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (IoError, OSError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return 3
    except Exception as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
