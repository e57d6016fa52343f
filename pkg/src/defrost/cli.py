"""Command-line experiment runner.

Each subcommand reads one JSON config and writes its artefacts plus a
``manifest.json`` into the output directory::

    defrost gen        --config gen.json        --out runs/gen
    defrost train      --config train.json      --out runs/train
    defrost defrost    --config defrost.json    --out runs/profile --jobs 4
    defrost compliant  --config compliant.json  --out runs/compliant
    defrost similarity --config sim.json        --out runs/sim
    defrost run        --config any.json        --out runs/x   # dispatch on "kind"

Exit status: 0 on success, 1 for configuration errors, 2 for runtime errors.
Set ``DEFROST_LOG`` to ``error``, ``info`` or ``debug`` for log verbosity.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

from . import __version__
from . import io as dio
from . import network as nn
from . import protocols as pr
from . import simmetrics as sm
from .datagen import LabeledDataset
from .experiments import SOURCE_KINDS, Scenario, ScenarioConfig
from .plotting import emit_profile_svg

log = logging.getLogger("defrost")

KINDS = ("gen", "train", "defrost", "compliant", "similarity")


class ConfigError(Exception):
    pass


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON form; insensitive to key order."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _require(config, key, where="config"):
    if key not in config:
        raise ConfigError(f"{where} is missing required key '{key}'")
    return config[key]


class Run:
    """Output directory bookkeeping: emitted files and per-stage timings."""

    def __init__(self, config: dict, out: Path, jobs: int):
        self.config = config
        self.out = out
        self.jobs = jobs
        self.files: list[Path] = []
        self.stages: dict[str, float] = {}
        self.seed = int(_require(config, "seed"))
        self._scenario = None

    @property
    def scenario(self) -> Scenario:
        if self._scenario is None:
            raw = dict(self.config.get("scenario") or {})
            raw["seed"] = self.seed
            try:
                self._scenario = Scenario(ScenarioConfig.from_dict(raw))
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"invalid 'scenario' section: {exc}") from exc
        return self._scenario

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        log.info("stage %s", name)
        yield
        self.stages[name] = self.stages.get(name, 0.0) + time.perf_counter() - t0

    def path(self, name) -> Path:
        p = self.out / name
        self.files.append(p)
        return p

    def write_manifest(self, kind):
        entries = []
        for p in self.files:
            data = p.read_bytes()
            entries.append({"path": p.name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()})
        manifest = {
            "kind": kind,
            "config_hash": config_hash(self.config),
            "tool_version": __version__,
            "files": entries,
            "stages": self.stages,
            "config": self.config,
        }
        dio.write_json(manifest, self.out / "manifest.json")

    # -- config resolution -------------------------------------------------

    def dataset(self, ref, what) -> LabeledDataset:
        """A dataset from a file path or a scenario reference.

        Scenario references: ``{"pool": true}``, ``{"test": true}``,
        ``{"source": "gm"}`` or ``{"n_per_class": 64, "seed": 0}`` (a balanced
        target subsample).
        """
        if isinstance(ref, str):
            path = Path(ref)
            if not path.exists():
                raise ConfigError(f"'{what}': file {ref} does not exist")
            return dio.load_dataset(path)
        if not isinstance(ref, dict):
            raise ConfigError(f"'{what}' must be a path or an object")
        if ref.get("pool"):
            return self.scenario.pool
        if ref.get("test"):
            return self.scenario.test
        if "source" in ref:
            kind = ref["source"]
            if kind not in SOURCE_KINDS:
                raise ConfigError(f"'{what}.source' must be one of {SOURCE_KINDS}, got {kind!r}")
            return self.scenario.source_dataset(kind)
        if "n_per_class" in ref:
            return self.scenario.target_train(int(ref["n_per_class"]), int(ref.get("seed", 0)))
        raise ConfigError(f"'{what}' needs one of the keys pool/test/source/n_per_class")

    def network_spec(self, section=None) -> nn.NetworkSpec:
        section = section if section is not None else self.config.get("network")
        if section is None:
            return self.scenario.spec
        try:
            return nn.NetworkSpec.from_dict(section)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid 'network' section: {exc}") from exc

    def train_config(self, base: nn.TrainConfig | None = None, key="train") -> nn.TrainConfig:
        overrides = dict(self.config.get(key) or {})
        base = base or nn.TrainConfig()
        fields = dict(base.__dict__)
        unknown = set(overrides) - set(fields)
        if unknown:
            raise ConfigError(f"unknown key(s) in '{key}': {sorted(unknown)}")
        fields.update(overrides)
        fields["seed"] = int(overrides.get("seed", self.seed))
        try:
            return nn.TrainConfig(**fields)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid '{key}' section: {exc}") from exc

    def source(self, section=None, what="source"):
        """``(spec, params)`` of a network given by a checkpoint or a scenario source kind."""
        section = _require(self.config, "source") if section is None else section
        if not isinstance(section, dict):
            raise ConfigError(f"'{what}' must be an object")
        if "params" in section:
            spec = self.network_spec(section.get("network", self.config.get("network")))
            path = Path(section["params"])
            if not path.exists():
                raise ConfigError(f"'{what}.params': file {path} does not exist")
            params = dio.read_params(path)
            params.check(spec)
            return spec, params
        kind = section.get("kind")
        if kind not in SOURCE_KINDS:
            raise ConfigError(f"'{what}.kind' must be one of {SOURCE_KINDS}, got {kind!r}")
        return self.scenario.spec, self.scenario.source_network(kind, int(section.get("seed", 0)))

    def seeds(self):
        seeds = self.config.get("seeds", [self.seed])
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("'seeds' must be a non-empty list")
        return [int(s) for s in seeds]


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(run: Run):
    names = run.config.get("datasets", ["pool", "test", "isogm", "gm"])
    fmt = run.config.get("format", "dfl1")
    if fmt not in ("dfl1", "csv"):
        raise ConfigError(f"'format' must be dfl1 or csv, got {fmt!r}")
    for name in names:
        with run.stage(f"gen:{name}"):
            if name == "pool":
                data = run.scenario.pool
            elif name == "test":
                data = run.scenario.test
            elif name in SOURCE_KINDS:
                data = run.scenario.source_dataset(name)
            else:
                raise ConfigError(f"'datasets' entry {name!r} is not one of pool, test, {', '.join(SOURCE_KINDS)}")
            dio.save_dataset(data, run.path(f"{name}.{fmt}"))
    for target in run.config.get("targets", []):
        n, s = int(target["n_per_class"]), int(target.get("seed", 0))
        with run.stage("gen:targets"):
            dio.save_dataset(run.scenario.target_train(n, s), run.path(f"target_{n}_s{s}.{fmt}"))


def cmd_train(run: Run):
    spec = run.network_spec()
    data = run.dataset(_require(run.config, "data"), "data")
    config = run.train_config(run.scenario.config.source_train if "scenario" in run.config else None)
    with run.stage("train"):
        params, history = nn.train(spec, nn.he_init(spec, run.seed), data.features, data.labels, config)
    dio.write_params(params, run.path("params.dfw1"))
    dio.write_json(spec.to_dict(), run.path("network.json"))
    dio.write_history_csv(history, run.path("history.csv"))
    metrics = {"train_acc": nn.evaluate(spec, params, data.features, data.labels)}
    if "test" in run.config:
        test = run.dataset(run.config["test"], "test")
        metrics["test_acc"] = nn.evaluate(spec, params, test.features, test.labels)
    dio.write_json(metrics, run.path("metrics.json"))


def _task(run: Run):
    with run.stage("source"):
        spec, params = run.source()
    with run.stage("data"):
        train = run.dataset(_require(run.config, "target_train"), "target_train")
        test = run.dataset(run.config.get("target_test", {"test": True}), "target_test")
    try:
        return pr.TransferTask(spec, params, train, test)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _target_config(run: Run, task):
    base = None
    if "scenario" in run.config or "train" not in run.config:
        n_per_class = task.train.n_samples // task.train.num_classes
        base = run.scenario.target_config(n_per_class)
    return run.train_config(base)


def cmd_defrost(run: Run):
    task = _task(run)
    config = _target_config(run, task)
    cuts = [int(k) for k in run.config.get("cuts", task.cuts)]
    seeds = run.seeds()
    with run.stage("profile"):
        try:
            profile = pr.build_profile(task, cuts, seeds, config, n_jobs=run.jobs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    dio.write_profile_csv(profile, run.path("profile.csv"))
    meta = {"network": task.source_spec.to_dict(), "train": config.__dict__, "cuts": cuts, "seeds": seeds,
            "profile": profile.to_dict()}
    if "probe_budget" in run.config:
        table = {e.cut: e.mean_acc for e in profile.entries}
        anchors = pr.probe_anchors(task.source_spec)
        best, probed = pr.probe_search(cuts, anchors, int(run.config["probe_budget"]), table.__getitem__)
        meta["probe"] = {"budget": int(run.config["probe_budget"]), "estimate": best,
                         "probed": {str(k): v for k, v in sorted(probed.items())}}
    dio.write_json(meta, run.path("profile.json"))
    emit_profile_svg(profile, run.path("profile.svg"), title=run.config.get("title", "defrosting profile"))


def cmd_compliant(run: Run):
    task = _task(run)
    config = _target_config(run, task)
    lambdas = _require(run.config, "lambdas")
    layers = run.config.get("coupled_layers", [0])
    with run.stage("sweep"):
        try:
            result = pr.compliant_sweep(task, lambdas, layers, config, run.seeds(), n_jobs=run.jobs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    dio.write_compliant_csv(result, run.path("compliant.csv"))
    dio.write_json({"network": task.source_spec.to_dict(), "train": config.__dict__, "seeds": run.seeds(),
                    "result": result.to_dict()}, run.path("compliant.json"))


def cmd_similarity(run: Run):
    nets = _require(run.config, "networks")
    if not isinstance(nets, dict) or set(nets) != {"a", "b"}:
        raise ConfigError("'networks' must have exactly the keys 'a' and 'b'")
    with run.stage("networks"):
        resolved = {name: run.source(section, f"networks.{name}") for name, section in sorted(nets.items())}
    probe = run.dataset(run.config.get("probe", {"test": True}), "probe")
    metrics = run.config.get("metrics", [{"name": "ii"}])
    curves = []
    with run.stage("metrics"):
        (spec_a, pa), (spec_b, pb) = resolved["a"], resolved["b"]
        for m in metrics:
            m = dict(m)
            name = m.pop("name")
            try:
                curves.append(sm.layerwise_curve(spec_a, pa, spec_b, pb, probe.features, name, **m))
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"metric {name!r}: {exc}") from exc
    dio.write_curve_csv(curves, run.path("curve.csv"))
    dio.write_json({"curves": [{"metric": c.metric, "layers": c.layers, "values": c.values} for c in curves]},
                   run.path("curve.json"))
    if run.config.get("dump_representations"):
        for layer in range(1, spec_a.n_layers + 1):
            for name, (spec, params) in resolved.items():
                rep = nn.extract_representation(spec, params, probe.features, layer)
                dio.write_representation(rep, run.path(f"rep_{name}_layer{layer}.dfl1"))


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "defrost": cmd_defrost, "compliant": cmd_compliant,
            "similarity": cmd_similarity}


def run_config(config: dict, out, jobs: int = 1, kind: str | None = None) -> int:
    """Execute one experiment; returns the process exit code."""
    out = Path(out)
    try:
        if not isinstance(config, dict):
            raise ConfigError("config must be a JSON object")
        declared = config.get("kind", kind)
        if declared is None:
            raise ConfigError("config is missing required key 'kind'")
        if declared not in COMMANDS:
            raise ConfigError(f"unknown experiment kind {declared!r} in key 'kind'; expected one of {KINDS}")
        if kind is not None and declared != kind:
            raise ConfigError(f"config key 'kind' is {declared!r} but the subcommand is {kind!r}")
        if jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        out.mkdir(parents=True, exist_ok=True)
        run = Run(config, out, jobs)
        COMMANDS[declared](run)
        run.write_manifest(declared)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def _configure_logging():
    level = os.environ.get("DEFROST_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="defrost", description="layer-wise defrosting experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*KINDS, "run"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--jobs", type=int, default=1)
    return parser


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        config = json.loads(args.config.read_text())
    except FileNotFoundError:
        print(f"config error: {args.config} does not exist", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"config error: {args.config} is not valid JSON: {exc}", file=sys.stderr)
        return 1
    kind = None if args.command == "run" else args.command
    return run_config(config, args.out, jobs=args.jobs, kind=kind)


if __name__ == "__main__":
    sys.exit(main())
