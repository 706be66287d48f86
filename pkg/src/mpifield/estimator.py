"""Scikit-learn style parameter handling for the trainer classes.

Constructor keyword arguments are hyperparameters; ``get_params`` /
``set_params`` follow the sklearn contract (derived from the __init__
signature, stored verbatim on the instance), so the trainers work with
``sklearn.base.clone`` and grid-search style tooling without depending
on sklearn itself.  Fitted attributes carry a trailing underscore.
"""

from __future__ import annotations

import inspect


class EstimatorMixin:
    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [name for name, p in sig.parameters.items()
                if name != "self" and p.kind == p.POSITIONAL_OR_KEYWORD]

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ValueError(f"invalid parameter {key!r} for {type(self).__name__}; "
                                 f"valid parameters are {sorted(valid)}")
            setattr(self, key, value)
        return self

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"

    def _check_fitted(self, attr):
        if not hasattr(self, attr):
            raise RuntimeError(f"{type(self).__name__} is not fitted yet; call fit() first")
