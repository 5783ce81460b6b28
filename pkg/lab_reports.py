"""
Verification Reports and Output Writers

VerificationReport collects grid findings the way a QC run collects rule violations:
each finding is a dict with a rule, a severity, a description and its coordinates, and
the report's pass flag is simply "no findings and every internal check held".
"""

import json
import os
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np
import pandas as pd

from generating_functions import DomainError
from lab_config import DEFAULTS, SCHEMA_VERSION


@dataclass(frozen=True)
class GridSpec:
    """Grid resolutions for the lemma verifiers."""

    resolution_1d: int = DEFAULTS['momed3']['grid_1d']
    resolution_2d: int = DEFAULTS['momed3']['grid_2d']
    slices: int = DEFAULTS['momue']['slice_count']

    def __post_init__(self):
        if self.resolution_1d < 256 or self.resolution_2d < 256:
            raise DomainError(f"Grid resolution must be at least 256, got {self}")
        if self.slices < 2:
            raise DomainError(f"At least two slices are needed, got {self.slices}")

    def to_dict(self):
        return asdict(self)


def _jsonable(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (Fraction, complex)):
        return str(value)
    if isinstance(value, pd.DataFrame):
        return value.to_dict(orient='records')
    if hasattr(value, 'to_dict'):
        return value.to_dict()
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"Cannot serialise {type(value).__name__}")


@dataclass
class VerificationReport:
    """Findings of one lemma or theorem verification run."""

    lemma_id: str
    parameters: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    max_observed: float = float('nan')
    margin: float = float('nan')
    violations: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    values: pd.DataFrame = field(default_factory=pd.DataFrame)

    def add_violation(self, rule, description, severity='CRITICAL', **coordinates):
        self.violations.append({'rule': rule, 'severity': severity,
                                'description': description, **coordinates})

    def add_check(self, name, value, bound, relation='<'):
        """Record an internal inequality value `relation` bound and whether it held."""
        held = {'<': value < bound, '<=': value <= bound, '>': value > bound,
                '>=': value >= bound, '==': value == bound}[relation]
        self.checks.append({'check': name, 'value': value, 'relation': relation,
                            'bound': bound, 'passed': bool(held)})
        return bool(held)

    @property
    def passed(self):
        return not self.violations and all(c['passed'] for c in self.checks)

    def violations_frame(self):
        return pd.DataFrame(self.violations)

    def checks_frame(self):
        return pd.DataFrame(self.checks)

    def summary(self):
        failed_checks = [c['check'] for c in self.checks if not c['passed']]
        summary = {
            'lemma_id': self.lemma_id,
            'total_violations': len(self.violations),
            'failed_checks': failed_checks,
            'max_observed': self.max_observed,
            'margin': self.margin,
        }
        if self.passed:
            summary['message'] = f"✓ {self.lemma_id}: verified"
        else:
            summary['message'] = (f"⚠ {self.lemma_id}: {len(self.violations)} violations, "
                                  f"{len(failed_checks)} failed checks")
        return summary

    def to_dict(self, config=None):
        return {
            'schema_version': SCHEMA_VERSION,
            'config': config or {},
            'lemma_id': self.lemma_id,
            'passed': self.passed,
            'parameters': self.parameters,
            'grid': self.grid,
            'max_observed': self.max_observed,
            'margin': self.margin,
            'checks': self.checks,
            'violations': self.violations,
            'values': self.values,
        }


def dumps(payload):
    return json.dumps(payload, indent=2, default=_jsonable, allow_nan=True)


def write_json(payload, path):
    _ensure_parent(path)
    with open(path, 'w') as handle:
        handle.write(dumps(payload))
        handle.write('\n')


def write_csv(frame, path, config=None):
    """Write a DataFrame as CSV, preceded by a '# config:' line when config is given."""
    _ensure_parent(path)
    with open(path, 'w', newline='') as handle:
        if config is not None:
            handle.write('# config: ' + json.dumps(config, default=_jsonable) + '\n')
        frame.to_csv(handle, index=False)


def read_csv(path):
    """Read a CSV written by write_csv, skipping its config line."""
    return pd.read_csv(path, comment='#')


def write_jsonl(frame, path):
    _ensure_parent(path)
    frame.to_json(path, orient='records', lines=True)


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
