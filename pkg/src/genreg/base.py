"""Estimator base class and input validation helpers."""

import inspect

import numpy as np


class ParamsMixin:
    """Minimal sklearn-style parameter handling for estimator classes.

    Constructor arguments are the hyperparameters; fitted state uses
    trailing-underscore attributes.
    """

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [
            name
            for name, p in sig.parameters.items()
            if name != "self" and p.kind not in (p.VAR_POSITIONAL, p.VAR_KEYWORD)
        ]

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ValueError(
                    f"invalid parameter {key!r} for {type(self).__name__}; "
                    f"valid parameters are {sorted(valid)}"
                )
            setattr(self, key, value)
        return self

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"


def seeded_rng(*parts):
    """Counter-style deterministic RNG from integer seed components."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(p) for p in parts])))


def check_finite(arr, name="array"):
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_array(arr, name="array", shape=None, dtype=np.float64):
    """Validate a numeric array: finite everywhere, optional shape constraint.

    shape entries of None are wildcards (e.g. (None, 3) for an N-by-3 array).
    """
    arr = np.asarray(arr, dtype=dtype)
    if shape is not None:
        if arr.ndim != len(shape):
            raise ValueError(f"{name} must be {len(shape)}-dimensional, got shape {arr.shape}")
        for axis, want in enumerate(shape):
            if want is not None and arr.shape[axis] != want:
                raise ValueError(f"{name} has shape {arr.shape}, expected axis {axis} = {want}")
    return check_finite(arr, name)


def check_points(points, name="points"):
    """Validate an N-by-3 coordinate array."""
    return check_array(points, name=name, shape=(None, 3))


def check_same_length(a, b, name_a="first", name_b="second"):
    if len(a) != len(b):
        raise ValueError(f"{name_a} has {len(a)} rows but {name_b} has {len(b)}")
