"""Command-line entry point: ``tao <subcommand> --config exp.json --out DIR``.

Exit status is 0 on success, 1 on a validation problem (bad config, bad or
mismatched artifact) and 2 on any other runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .dataset import Dataset
from .errors import ArtifactMismatch, TaoError, ValidationError
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.model import TaoModel
from .nn.train import TrainConfig, init_head_biases, train
from .pipeline import build_for, label_report, programs_from_specs, trace_pairs
from .refsim.programs import generate_program
from .refsim.trace import load_trace, save_trace
from .select import measure, sample_designs, select_pair
from .sim import InstructionPredictions, report, simulate_parallel, workers_from_env
from .xfer import FinetuneJob, SharedTrainer, finetune


# artifacts

class Run:
    """Resolved config, output directory and manifest bookkeeping for one command."""

    def __init__(self, args):
        self.args = args
        if args.config:
            self.cfg = ExperimentConfig.load(args.config)
        else:
            self.cfg = ExperimentConfig.from_json({})
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.workers = workers_from_env(args.workers)
        self.config_hash = self.cfg.hash()
        self.schema = self.cfg.feature_schema()

    def header(self, **extra) -> dict:
        h = {"config_hash": self.config_hash, "schema_hash": self.schema.hash()}
        h.update(extra)
        return h

    def path(self, *parts) -> Path:
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def check(self, header: dict | None, what) -> None:
        if not header:
            raise ArtifactMismatch(f"{what}: missing artifact header")
        got = header.get("config_hash")
        if got != self.config_hash:
            raise ArtifactMismatch(f"{what}: produced under config {got}, current config is {self.config_hash}")
        sh = header.get("schema_hash")
        if sh is not None and sh != self.schema.hash():
            raise ArtifactMismatch(f"{what}: schema {sh} != {self.schema.hash()}")

    def record(self, *paths) -> None:
        """Add files to manifest.json; the timestamp is not part of any content hash."""
        mp = self.out / "manifest.json"
        manifest = json.loads(mp.read_text()) if mp.exists() else {}
        for p in paths:
            p = Path(p)
            manifest[str(p.relative_to(self.out))] = {
                "sha256": hashlib.sha256(p.read_bytes()).hexdigest(),
                "config_hash": self.config_hash,
                "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
            }
        mp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    def write_json(self, path: Path, obj) -> Path:
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
        return path

    def train_cfg(self) -> TrainConfig:
        tc = self.cfg.train
        if getattr(self.args, "seed", None) is not None:
            tc = replace(tc, seed=self.args.seed)
        return tc


def _uarch_tag(uarch) -> str:
    return hashlib.sha256(json.dumps(uarch.to_json(), sort_keys=True).encode()).hexdigest()[:10]


def _trace_paths(run: Run, uarch, name: str):
    tag = _uarch_tag(uarch)
    return (run.path("traces", tag, f"{name}.functional.jsonl"),
            run.path("traces", tag, f"{name}.detailed.jsonl"))


def _load_pairs(run: Run, specs, uarch):
    pairs = []
    for s in specs:
        fp, dp = _trace_paths(run, uarch, s.name)
        if not fp.exists() or not dp.exists():
            raise ValidationError(f"missing trace {fp.name} / {dp.name}; run gen-traces first")
        f, fh = load_trace(fp)
        d, dh = load_trace(dp)
        run.check(fh, fp)
        run.check(dh, dp)
        pairs.append((f, d))
    return pairs


def _load_dataset(run: Run, path: Path) -> Dataset:
    if not path.exists():
        raise ValidationError(f"missing dataset {path}; run build-dataset first")
    ds = Dataset.load(path, expect_schema_hash=run.schema.hash())
    run.check(ds.header, path)
    return ds


def _load_model(run: Run, path: Path) -> tuple[TaoModel, dict]:
    if not path.exists():
        raise ValidationError(f"missing checkpoint {path}")
    model, header = load_checkpoint(path, expect_schema_hash=run.schema.hash())
    run.check(header["extra"], path)
    return model, header


# subcommands

def cmd_gen_program(run: Run) -> None:
    a = run.args
    if a.seed is not None and a.profile:
        programs = [generate_program(a.seed, a.profile, a.length)]
    else:
        programs = programs_from_specs(run.cfg.programs.train + run.cfg.programs.test)
    paths = []
    for p in programs:
        doc = {"_header": run.header(), "program": p.to_json()}
        paths.append(run.write_json(run.path("programs", f"{p.name}.json"), doc))
    run.record(*paths)
    print(f"wrote {len(paths)} program(s) to {run.out / 'programs'}")


def cmd_gen_traces(run: Run) -> None:
    specs = run.cfg.programs.train + run.cfg.programs.test
    programs = programs_from_specs(specs)
    pairs = trace_pairs(programs, run.cfg.uarch, run.cfg.programs.budget, run.workers)
    paths = []
    for s, (f, d) in zip(specs, pairs):
        fp, dp = _trace_paths(run, run.cfg.uarch, s.name)
        save_trace(fp, f, run.header(kind="functional", program=s.name))
        save_trace(dp, d, run.header(kind="detailed", program=s.name, uarch=run.cfg.uarch.to_json()))
        paths += [fp, dp]
    run.record(*paths)
    print(f"wrote {len(paths)} trace file(s)")


def cmd_build_dataset(run: Run) -> None:
    from .dataset import dataset_from_traces
    pairs = _load_pairs(run, run.cfg.programs.train, run.cfg.uarch)
    ds = dataset_from_traces([f for f, _ in pairs], [d for _, d in pairs], run.schema, run.cfg.schema.N)
    ds.meta = {"uarch": run.cfg.uarch.to_json(), "programs": [s.name for s in run.cfg.programs.train]}
    out = run.path("dataset.tds")
    ds.save(out, extra_header=run.header())
    run.record(out)
    print(f"dataset: {len(ds)} samples from {ds.n_rows} instructions -> {out}")


def cmd_train(run: Run) -> None:
    ds = _load_dataset(run, run.path("dataset.tds"))
    tc = run.train_cfg()
    model = TaoModel(run.cfg.model_config(), run.schema, seed=tc.seed, arch_id=_uarch_tag(run.cfg.uarch))
    init_head_biases(model, ds)
    hist = train(model, ds, tc, log=lambda r: print(json.dumps(r)))
    out = run.path("model.ckpt")
    digest = save_checkpoint(model, out, extra=run.header(train=tc.to_json(), history=hist))
    run.record(out)
    print(f"checkpoint {out} sha256={digest}")


def _selected_configs(run: Run):
    from .refsim.config import MicroArchConfig
    path = run.path("selection.json")
    if not path.exists():
        raise ValidationError(f"missing {path}; run select-designs first")
    doc = json.loads(path.read_text())
    run.check(doc.get("_header"), path)
    designs = doc["designs"]
    return [MicroArchConfig.from_json(designs[k]["config"]) for k in doc["pair"]]


def cmd_select_designs(run: Run) -> None:
    sc = run.cfg.select
    seed = run.args.seed if run.args.seed is not None else sc.seed
    configs = sample_designs(sc.n, seed)
    programs = programs_from_specs(run.cfg.programs.train)
    samples = measure(configs, programs, sc.budget, run.workers)
    sel = select_pair(samples)
    doc = {"_header": run.header(), **sel.to_json()}
    jp = run.write_json(run.path("selection.json"), doc)
    cp = run.path("designs.csv")
    cp.write_text(sel.metrics_csv())
    run.record(jp, cp)
    print(f"selected designs {sel.pair} at distance {sel.distances[sel.pair]:.4f}")


def cmd_train_shared(run: Run) -> None:
    configs = _selected_configs(run)
    programs = programs_from_specs(run.cfg.programs.train)
    N = run.cfg.schema.N
    datasets = [build_for(programs, c, run.cfg.programs.budget, run.schema, N, run.workers) for c in configs]
    tc = run.train_cfg()
    mode = run.args.combine_mode
    trainer = SharedTrainer(run.cfg.model_config(), run.schema, [_uarch_tag(c) for c in configs],
                            datasets, mode, tc, seed=tc.seed)
    hist = trainer.fit(tc.epochs, log=lambda r: print(json.dumps(r)))
    paths = []
    for k, c in enumerate(configs):
        p = run.path("shared", f"branch{k}.ckpt")
        save_checkpoint(trainer.model(k), p, extra=run.header(
            combine_mode=mode, branches=[_uarch_tag(x) for x in configs], uarch=c.to_json(), history=hist))
        paths.append(p)
    run.record(*paths)
    print(f"wrote {len(paths)} branch checkpoints ({mode})")


def _finetune_on(run: Run, base: TaoModel, uarch, programs) -> TaoModel:
    fs = run.cfg.finetune
    ds = build_for(programs, uarch, run.cfg.programs.budget, run.schema, run.cfg.schema.N, run.workers)
    tc = replace(run.train_cfg(), epochs=fs.epochs, lr=fs.lr)
    init = TaoModel(base.cfg, base.schema, shared=base.shared, arch=base.arch, arch_id=_uarch_tag(uarch))
    tuned, _ = finetune(FinetuneJob(init, ds, _uarch_tag(uarch), tc), budget=fs.budget)
    return tuned


def _base_checkpoint(run: Run) -> Path:
    if run.args.checkpoint:
        return Path(run.args.checkpoint)
    for cand in (run.path("shared", "branch0.ckpt"), run.path("model.ckpt")):
        if cand.exists():
            return cand
    raise ValidationError("no checkpoint given and none found in the output directory")


def cmd_finetune(run: Run) -> None:
    base, _ = _load_model(run, _base_checkpoint(run))
    tuned = _finetune_on(run, base, run.cfg.uarch, programs_from_specs(run.cfg.programs.train))
    out = run.path("finetuned.ckpt")
    digest = save_checkpoint(tuned, out, extra=run.header(uarch=run.cfg.uarch.to_json(), finetune=True))
    run.record(out)
    print(f"checkpoint {out} sha256={digest}")


def _sim_settings(run: Run) -> dict:
    s = run.cfg.simulate
    return {"window": s.K, "rounding": s.rounding, "mode": s.count_mode, "threshold": s.threshold}


def cmd_simulate(run: Run) -> None:
    ck = Path(run.args.checkpoint) if run.args.checkpoint else None
    if ck is None:
        for cand in (run.path("finetuned.ckpt"), run.path("model.ckpt")):
            if cand.exists():
                ck = cand
                break
    if ck is None:
        raise ValidationError("no checkpoint given and none found in the output directory")
    model, _ = _load_model(run, ck)
    s = run.cfg.simulate
    pairs = _load_pairs(run, run.cfg.programs.test, run.cfg.uarch)
    paths = []
    summary = []
    for spec, (f, d) in zip(run.cfg.programs.test, pairs):
        rep = simulate_parallel(model, f, s.P, s.W, truth=d, window=s.K, workers=run.workers,
                                rounding=s.rounding, mode=s.count_mode, threshold=s.threshold)
        p = rep.predictions
        npz = run.path("sim", f"{spec.name}.pred.npz")
        with open(npz, "wb") as fh:
            np.savez(fh, **{k: getattr(p, k) for k in ("fetch", "exec", "mispred_prob", "dlevel_prob",
                                                         "icache_prob", "is_branch", "is_mem")})
        paths += _write_report(run, spec.name, rep) + [npz]
        summary.append({"program": spec.name, "cpi_error_pct": rep.cpi_error_pct})
    run.record(*paths)
    _emit(run, summary)


def _write_report(run: Run, name: str, rep) -> list[Path]:
    jp = run.path("sim", f"{name}.report.json")
    doc = rep.to_json()
    doc["_header"] = run.header(program=name)
    run.write_json(jp, doc)
    cp = run.path("sim", f"{name}.phases.csv")
    cp.write_text(rep.phase_csv())
    return [jp, cp]


def _emit(run: Run, rows: list[dict]) -> None:
    if run.args.format == "csv" and rows:
        keys = list(rows[0])
        print(",".join(keys))
        for r in rows:
            print(",".join("" if r[k] is None else str(r[k]) for k in keys))
    else:
        print(json.dumps(rows, indent=2))


def cmd_report(run: Run) -> None:
    st = _sim_settings(run)
    pairs = _load_pairs(run, run.cfg.programs.test, run.cfg.uarch)
    rows, paths = [], []
    for spec, (f, d) in zip(run.cfg.programs.test, pairs):
        if run.args.labels_as_predictions:
            rep = label_report(d, st["window"])
        else:
            npz = run.path("sim", f"{spec.name}.pred.npz")
            if not npz.exists():
                raise ValidationError(f"missing {npz}; run simulate first or pass --labels-as-predictions")
            z = np.load(npz)
            pred = InstructionPredictions(*(z[k] for k in ("fetch", "exec", "mispred_prob", "dlevel_prob",
                                                          "icache_prob", "is_branch", "is_mem")))
            rep = report(pred, d, **st)
        paths += _write_report(run, spec.name, rep)
        e = rep.errors()
        rows.append({"program": spec.name, "cpi_error_pct": rep.cpi_error_pct,
                     "l1d_mpki_error_pct": e["l1d_mpki"], "branch_mpki_error_pct": e["branch_mpki"]})
    run.record(*paths)
    _emit(run, rows)


def _parse_value(param: str, v: str):
    v = v.strip()
    if param == "branch_predictor":
        return v
    try:
        return int(v)
    except ValueError:
        raise ValidationError(f"--values: {v!r} is not an integer for {param}") from None


def cmd_explore(run: Run) -> None:
    a = run.args
    if not a.param or not a.values:
        raise ValidationError("explore needs --param and --values")
    values = [_parse_value(a.param, v) for v in a.values.split(",") if v.strip()]
    try:
        points = [run.cfg.uarch.with_param(a.param, v) for v in values]
    except ValueError as e:
        raise ValidationError(f"--param {a.param}: {e}") from None
    base, _ = _load_model(run, _base_checkpoint(run))
    train_progs = programs_from_specs(run.cfg.programs.train)
    test_progs = programs_from_specs(run.cfg.programs.test)
    if not test_progs:
        raise ValidationError("explore needs at least one test program")
    st = _sim_settings(run)
    rows = []
    for v, uarch in zip(values, points):
        tuned = _finetune_on(run, base, uarch, train_progs)
        preds, truths = [], []
        for f, d in trace_pairs(test_progs, uarch, run.cfg.programs.budget, run.workers):
            rep = simulate_parallel(tuned, f, run.cfg.simulate.P, run.cfg.simulate.W, truth=d,
                                    window=st["window"], rounding=st["rounding"], mode=st["mode"],
                                    threshold=st["threshold"])
            preds.append(rep.predicted)
            truths.append(rep.truth)
        avg = lambda ms, k: float(np.mean([getattr(m, k) for m in ms]))
        rows.append({"param": a.param, "value": v,
                     "cpi_pred": avg(preds, "cpi"), "cpi_truth": avg(truths, "cpi"),
                     "l1d_mpki_pred": avg(preds, "l1d_mpki"), "l1d_mpki_truth": avg(truths, "l1d_mpki"),
                     "br_mpki_pred": avg(preds, "branch_mpki"), "br_mpki_truth": avg(truths, "branch_mpki")})
        print(json.dumps(rows[-1]), file=sys.stderr)
    cp = run.path("explore.csv")
    keys = list(rows[0])
    lines = [",".join(keys)] + [",".join(str(r[k]) for k in keys) for r in rows]
    cp.write_text("\n".join(lines) + "\n")
    run.record(cp)
    _emit(run, rows)


COMMANDS = {
    "gen-program": cmd_gen_program,
    "gen-traces": cmd_gen_traces,
    "build-dataset": cmd_build_dataset,
    "train": cmd_train,
    "train-shared": cmd_train_shared,
    "finetune": cmd_finetune,
    "select-designs": cmd_select_designs,
    "simulate": cmd_simulate,
    "explore": cmd_explore,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tao", description="Learned microarchitecture simulation toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment JSON")
        p.add_argument("--out", default="tao-out", help="artifact directory")
        p.add_argument("--workers", type=int, default=None, help="parallel workers (env TAO_WORKERS)")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        if name == "gen-program":
            p.add_argument("--profile", choices=("compute", "memory", "branchy", "mixed"))
            p.add_argument("--length", type=int, default=200)
        if name in ("finetune", "simulate", "explore"):
            p.add_argument("--checkpoint", help="model checkpoint to start from")
        if name == "train-shared":
            p.add_argument("--combine-mode", default="normalized_average",
                           choices=("normalized_average", "plain_average", "gradnorm"))
        if name == "explore":
            p.add_argument("--param", help="dotted parameter name, e.g. l1d.size")
            p.add_argument("--values", help="comma-separated values")
        if name == "report":
            p.add_argument("--labels-as-predictions", action="store_true",
                           help="score the ground-truth labels instead of stored predictions")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run = Run(args)
        COMMANDS[args.command](run)
    except ValidationError as e:
        print(f"tao {args.command}: error: {e}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as e:
        print(f"tao {args.command}: error: {e}", file=sys.stderr)
        return 1
    except (TaoError, NotImplementedError, RuntimeError, ValueError) as e:
        print(f"tao {args.command}: runtime error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
