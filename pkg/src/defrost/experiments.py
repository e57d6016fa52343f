"""The synthetic transfer scenario: a reference task, its clones, and source networks.

:class:`Scenario` lazily builds and caches every artefact from one
:class:`ScenarioConfig`, deriving independent random streams from the single
config seed. The defaults are the desk-scale setting used by the acceptance
experiments.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property

import numpy as np

from . import datagen as dg
from . import network as nn
from .protocols import TransferTask

SOURCE_KINDS = ("reference", "isogm", "gm", "ae")

# stream tags for SeedSequence([seed, tag])
_POOL, _TEST, _SOURCE, _AE_FIT, _AE_DATA, _SUBSAMPLE, _NET = range(7)


@dataclass(frozen=True)
class AutoencoderSettings:
    bottleneck: int = 32
    hidden: tuple[int, ...] = (128,)
    activation: str = "gelu"
    epochs: int = 100
    batch_size: int = 256
    lr: float = 3e-3
    lr_floor: float = 1e-5
    warmup_epochs: int = 20
    fit_per_class: int = 2500


@dataclass(frozen=True)
class ScenarioConfig:
    reference: dg.ReferenceConfig = field(default_factory=lambda: dg.ReferenceConfig(32, 4, 16, 1.5, 0))
    hidden: tuple[int, ...] = (128, 128, 64, 64, 32)
    activation: str = "relu"
    pool_per_class: int = 10_000
    test_per_class: int = 500
    source_per_class: int = 10_000
    source_train: nn.TrainConfig = field(default_factory=lambda: nn.TrainConfig(epochs=20, lr=0.05))
    target_train: nn.TrainConfig = field(default_factory=lambda: nn.TrainConfig(epochs=30, lr=0.05))
    # target runs get max(target_train.epochs, ceil(target_steps / batches per epoch)) epochs
    target_steps: int = 2000
    autoencoder: AutoencoderSettings = field(default_factory=AutoencoderSettings)
    seed: int = 0

    @property
    def widths(self) -> list[int]:
        return [self.reference.n_features, *self.hidden, self.reference.n_classes]

    def spec(self) -> nn.NetworkSpec:
        return nn.NetworkSpec.from_widths(self.widths, self.activation)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict | None) -> "ScenarioConfig":
        d = dict(d or {})
        kw = {}
        if "reference" in d:
            kw["reference"] = dg.ReferenceConfig(**d.pop("reference"))
        for key in ("source_train", "target_train"):
            if key in d:
                kw[key] = nn.TrainConfig(**d.pop(key))
        if "autoencoder" in d:
            ae = dict(d.pop("autoencoder"))
            if "hidden" in ae:
                ae["hidden"] = tuple(ae["hidden"])
            kw["autoencoder"] = AutoencoderSettings(**ae)
        if "hidden" in d:
            kw["hidden"] = tuple(d.pop("hidden"))
        unknown = set(d) - {"activation", "pool_per_class", "test_per_class", "source_per_class",
                            "target_steps", "seed"}
        if unknown:
            raise KeyError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**kw, **d)


def epochs_for(config: nn.TrainConfig, n_samples: int, target_steps: int) -> nn.TrainConfig:
    """Stretch the epoch count so small training sets still get ``target_steps`` updates."""
    batches = math.ceil(n_samples / config.batch_size)
    return replace(config, epochs=max(config.epochs, math.ceil(target_steps / batches)))


class Scenario:
    """Datasets and trained source networks for one :class:`ScenarioConfig`."""

    def __init__(self, config: ScenarioConfig | None = None):
        self.config = config or ScenarioConfig()
        self._sources: dict[str, dg.LabeledDataset] = {}
        self._networks: dict[tuple[str, int], nn.ParamSet] = {}

    def _seed(self, *tags):
        return np.random.SeedSequence([self.config.seed, *tags])

    @property
    def spec(self) -> nn.NetworkSpec:
        return self.config.spec()

    @cached_property
    def _pool_and_stats(self):
        raw = dg.make_reference(self.config.reference, self.config.pool_per_class, self._seed(_POOL))
        return dg.standardize(raw)

    @property
    def pool(self) -> dg.LabeledDataset:
        """Standardised reference sample that clones are fitted to and targets drawn from."""
        return self._pool_and_stats[0]

    @property
    def stats(self) -> dg.StandardizationStats:
        return self._pool_and_stats[1]

    def reference_sample(self, n_per_class, seed) -> dg.LabeledDataset:
        """Fresh reference data mapped with the pool statistics."""
        raw = dg.make_reference(self.config.reference, n_per_class, seed)
        return dg.LabeledDataset(self.stats.apply(raw.features), raw.labels, raw.num_classes)

    @cached_property
    def test(self) -> dg.LabeledDataset:
        return self.reference_sample(self.config.test_per_class, self._seed(_TEST))

    @cached_property
    def autoencoder(self) -> dg.AutoencoderClone:
        s = self.config.autoencoder
        fit_set = dg.subsample_balanced(self.pool, s.fit_per_class, self._seed(_AE_FIT))
        ae = dg.AutoencoderClone(
            bottleneck=min(s.bottleneck, self.config.reference.n_features), hidden=s.hidden,
            activation=s.activation, epochs=s.epochs, batch_size=s.batch_size, lr=s.lr, lr_floor=s.lr_floor,
            warmup_epochs=s.warmup_epochs, random_state=int(self._seed(_AE_FIT, 1).generate_state(1)[0]),
        )
        return ae.fit(fit_set.features)

    def source_dataset(self, kind: str) -> dg.LabeledDataset:
        """Standardised source-task data of ``source_per_class`` rows per class."""
        if kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source kind {kind!r}; expected one of {SOURCE_KINDS}")
        if kind not in self._sources:
            n = self.config.source_per_class
            tag = SOURCE_KINDS.index(kind)
            if kind == "reference":
                data = self.reference_sample(n, self._seed(_SOURCE, tag))
            elif kind == "isogm":
                data = dg.fit_isogm(self.pool).sample(n, self._seed(_SOURCE, tag))
            elif kind == "gm":
                data = dg.fit_gm(self.pool).sample(n, self._seed(_SOURCE, tag))
            else:
                data = dg.clone_via_autoencoder(self.autoencoder, self.reference_sample(n, self._seed(_AE_DATA)))
            self._sources[kind], _ = dg.standardize(data)
        return self._sources[kind]

    def source_network(self, kind: str, seed: int = 0) -> nn.ParamSet:
        """Network trained from scratch on the ``kind`` source data."""
        key = (kind, int(seed))
        if key not in self._networks:
            data = self.source_dataset(kind)
            init_ss, shuffle_ss = self._seed(_NET, SOURCE_KINDS.index(kind), int(seed)).spawn(2)
            config = self.config.source_train.with_seed(int(shuffle_ss.generate_state(1)[0]))
            params, _ = nn.train(self.spec, nn.he_init(self.spec, init_ss), data.features, data.labels, config)
            self._networks[key] = params
        return self._networks[key]

    def target_train(self, n_per_class: int, seed: int = 0) -> dg.LabeledDataset:
        return dg.subsample_balanced(self.pool, n_per_class, self._seed(_SUBSAMPLE, int(n_per_class), int(seed)))

    def target_config(self, n_per_class: int) -> nn.TrainConfig:
        n = n_per_class * self.config.reference.n_classes
        return epochs_for(self.config.target_train, n, self.config.target_steps)

    def task(self, kind: str, n_per_class: int, subsample_seed: int = 0, source_seed: int = 0) -> TransferTask:
        return TransferTask(self.spec, self.source_network(kind, source_seed),
                            self.target_train(n_per_class, subsample_seed), self.test)
