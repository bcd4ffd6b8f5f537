"""Numerical tolerance bundle shared by every solver.

Each field can be overridden through an environment variable named
``ETLQ_<FIELD>`` (for example ``ETLQ_TOL_FEAS=1e-8``).
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    tol_psd: float = 1e-9
    tol_pd: float = 1e-12
    tol_dyn: float = 1e-7
    tol_mem: float = 1e-9
    tol_zero: float = 1e-9
    tol_cost: float = 1e-6  # relative
    tol_strict: float = 1e-9
    tol_feas: float = 1e-7
    tol_kkt: float = 1e-6
    tol_lin: float = 1e-8

    def replace(self, **changes) -> "Tolerances":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_env(cls, environ=None) -> "Tolerances":
        environ = os.environ if environ is None else environ
        changes = {}
        for field in dataclasses.fields(cls):
            key = "ETLQ_" + field.name.upper()
            if key in environ:
                value = float(environ[key])
                if not value > 0:
                    raise ValueError(f"{key} must be positive, got {value}")
                changes[field.name] = value
        return cls(**changes)


DEFAULT = Tolerances()
