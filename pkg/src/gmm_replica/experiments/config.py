"""Experiment configuration: a TOML file with ``[experiment]`` and ``[solver]`` tables."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ..covariance import CovarianceError, CovarianceKind, CovarianceModel
from ..losses import LossKind
from ..replica import SolverOptions

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_LOG_LAMBDA = (-4.0, -3.5, -3.0, -2.5, -2.0, -1.5, -1.0)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Cell:
    """Indices and values identifying one grid cell."""

    structure: str
    sparsity: float
    log_lambda: float
    structure_index: int
    sparsity_index: int
    lambda_index: int

    @property
    def key(self) -> tuple:
        return (self.structure_index, self.sparsity_index, self.lambda_index)

    def ident(self) -> list:
        return [self.structure, repr(float(self.sparsity)), repr(float(self.log_lambda))]


@dataclass
class HistogramCell:
    structure: str = "ar1"
    sparsity: float = 0.1
    log_lambda: float = -2.0


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a campaign bit for bit.

    ``test_size = 0`` means "same size as the training set".
    """

    structures: list = field(default_factory=lambda: ["iid", "ar1"])
    p: int = 200
    alpha: float = 0.5
    sigma2: float = 2.0
    mu_norm: float = 2.0
    rho: float = 0.8
    band_value: float = 0.4
    band_width: int = 2
    sparsity: list = field(default_factory=lambda: [0.01, 0.1])
    log_lambda: list = field(default_factory=lambda: list(DEFAULT_LOG_LAMBDA))
    replicates: int = 100
    test_size: int = 0
    level: float = 0.05
    seed: int = 2024
    loss: str = "logistic"
    output_dir: str = "results"
    threads: int = 1
    histogram: HistogramCell = field(default_factory=HistogramCell)
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        try:
            self.structures = [CovarianceKind.parse(s).value for s in self.structures]
            for s in self.structures:
                self.covariance_model(s)
            self.histogram.structure = CovarianceKind.parse(self.histogram.structure).value
        except CovarianceError as exc:
            raise ConfigError(str(exc)) from None
        try:
            self.loss = LossKind(self.loss).value
        except ValueError:
            raise ConfigError(f"unknown loss {self.loss!r}") from None
        if not self.structures or not self.sparsity or not self.log_lambda:
            raise ConfigError("structures, sparsity and log_lambda must be non-empty")
        if self.alpha <= 0 or self.mu_norm <= 0:
            raise ConfigError("alpha and mu_norm must be positive")
        if self.replicates < 2:
            raise ConfigError("at least two replicates are needed for an interval")
        if self.test_size < 0:
            raise ConfigError("test_size must be >= 0")
        if not 0.0 < self.level < 1.0:
            raise ConfigError(f"level must lie in (0, 1), got {self.level}")
        for eps in self.sparsity:
            if not 0.0 < eps <= 1.0 or round(eps * self.p) < 1:
                raise ConfigError(f"sparsity {eps} gives no nonzero coordinate at p={self.p}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    @property
    def n(self) -> int:
        return int(round(self.alpha * self.p))

    @property
    def n_test(self) -> int:
        return self.test_size or self.n

    def covariance_model(self, structure: str) -> CovarianceModel:
        return CovarianceModel(structure, self.p, self.sigma2, self.rho, self.band_value, self.band_width)

    def cells(self) -> list:
        return [
            Cell(s, float(e), float(ll), i, j, k)
            for i, s in enumerate(self.structures)
            for j, e in enumerate(self.sparsity)
            for k, ll in enumerate(self.log_lambda)
        ]

    def histogram_cell(self) -> Cell:
        h = self.histogram
        return Cell(h.structure, float(h.sparsity), float(h.log_lambda), -1, -1, -1)

    def with_overrides(self, *, seed=None, output_dir=None, threads=None) -> "ExperimentConfig":
        changes = {}
        if seed is not None:
            changes["seed"] = int(seed)
        if output_dir is not None:
            changes["output_dir"] = str(output_dir)
        if threads is not None:
            changes["threads"] = int(threads)
        return replace(self, **changes)

    # seeds -------------------------------------------------------------
    # Every stream is derived from (seed, tag, structure, sparsity[, replicate]);
    # lambda is deliberately absent so the lambda grid shares designs and data.

    def _structure_key(self, structure: str) -> int:
        return list(CovarianceKind).index(CovarianceKind.parse(structure))

    def _sparsity_key(self, sparsity: float) -> int:
        return int(round(float(sparsity) * 1_000_000))

    def design_seed(self, cell: Cell) -> np.random.SeedSequence:
        return np.random.SeedSequence([self.seed, 1, self._structure_key(cell.structure), self._sparsity_key(cell.sparsity)])

    def solver_seed(self, cell: Cell) -> int:
        ss = np.random.SeedSequence([self.seed, 2, self._structure_key(cell.structure),
                                     self._sparsity_key(cell.sparsity), self.solver.seed])
        return int(ss.generate_state(1, np.uint32)[0])

    def train_seed(self, cell: Cell, rep: int) -> np.random.SeedSequence:
        return np.random.SeedSequence([self.seed, 3, self._structure_key(cell.structure), self._sparsity_key(cell.sparsity), rep])

    def test_seed(self, cell: Cell, rep: int) -> np.random.SeedSequence:
        return np.random.SeedSequence([self.seed, 4, self._structure_key(cell.structure), self._sparsity_key(cell.sparsity), rep])


def _build(cls, table: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**table)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from None


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    exp = dict(data.pop("experiment", {}))
    solver = data.pop("solver", {})
    if data:
        raise ConfigError(f"unknown table(s): {', '.join(sorted(data))}")
    if "histogram" in exp:
        exp["histogram"] = _build(HistogramCell, exp["histogram"], "experiment.histogram")
    exp["solver"] = _build(SolverOptions, solver, "solver")
    return _build(ExperimentConfig, exp, "experiment")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data)
