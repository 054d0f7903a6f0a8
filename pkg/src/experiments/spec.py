"""
Experiment specifications and run records for the Shift Learning Lab.
"""
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, List

from ..utils.errors import ConfigurationError
from ..utils.helpers import load_config, canonical_hash

logger = logging.getLogger(__name__)

KINDS = ('smallball', 'parametric', 'semiparam', 'prop31', 'figure1', 'junta-layerwise', 'junta-joint')


@dataclass
class ExperimentSpec:
    """One experiment: a kind, its parameters, the seeds to run and where outputs go."""
    kind: str
    parameters: Dict = field(default_factory=dict)
    seeds: List[int] = field(default_factory=lambda: [0])
    output_dir: str = 'results'

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if not isinstance(self.parameters, dict):
            raise ConfigurationError("parameters must be a mapping")
        try:
            self.seeds = [int(s) for s in self.seeds]
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"seeds must be integers: {e}") from e
        if not self.seeds:
            raise ConfigurationError("seeds must be nonempty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError(f"seeds must be distinct, got {self.seeds}")
        self.output_dir = str(self.output_dir)

    @property
    def spec_hash(self):
        """SHA-256 of the canonical JSON of kind and parameters."""
        return canonical_hash({'kind': self.kind, 'parameters': self.parameters})

    @classmethod
    def from_dict(cls, data):
        """
        Build a spec from a `{kind, parameters, seeds, output_dir}` mapping.

        Args:
            data (dict): Parsed experiment file

        Returns:
            ExperimentSpec: The spec
        """
        if 'kind' not in data:
            raise ConfigurationError("experiment file is missing 'kind'")
        unknown = set(data) - {'kind', 'parameters', 'seeds', 'output_dir'}
        if unknown:
            raise ConfigurationError(f"unknown experiment fields: {sorted(unknown)}")
        return cls(
            kind=data['kind'],
            parameters=dict(data.get('parameters') or {}),
            seeds=data.get('seeds', [0]),
            output_dir=data.get('output_dir', f"results/{data['kind']}"),
        )

    @classmethod
    def load(cls, path):
        """
        Load a spec from a JSON or YAML file.

        Args:
            path (str): Experiment file

        Returns:
            ExperimentSpec: The spec
        """
        spec = cls.from_dict(load_config(path))
        logger.debug(f"Loaded {spec.kind} experiment from {path} (hash {spec.spec_hash[:12]})")
        return spec

    def with_overrides(self, seeds=None, output_dir=None):
        """Copy of the spec with the CLI overrides applied."""
        return ExperimentSpec(
            kind=self.kind,
            parameters=dict(self.parameters),
            seeds=list(seeds) if seeds else list(self.seeds),
            output_dir=str(output_dir) if output_dir else self.output_dir,
        )

    def to_dict(self):
        return asdict(self)


@dataclass
class RunRecord:
    """
    Outcome of one (cell, seed) of an experiment.

    Metrics are scalars only; cell labels identify the grid point (for example
    d and eta) so that records of one experiment can be told apart.
    """
    spec_hash: str
    seed: int
    metrics: Dict[str, float]
    trace_paths: List[str] = field(default_factory=list)
    wall_time_s: float = 0.0
    cell: Dict = field(default_factory=dict)
    status: str = 'completed'

    def to_dict(self):
        data = asdict(self)
        data['trace_paths'] = [str(Path(p)) for p in self.trace_paths]
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})
