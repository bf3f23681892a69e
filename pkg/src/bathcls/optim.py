"""SGD, RMSProp and Adam over dicts of named numpy parameters."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

OPTIMIZERS = ("rmsprop", "adam", "sgd")


@dataclass
class OptimizerState:
    step: int = 0
    buffers: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"step": self.step, "buffers": {k: {b: v.copy() for b, v in d.items()} for k, d in self.buffers.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerState":
        return cls(d["step"], copy.deepcopy(d["buffers"]))


class Optimizer:
    """Update rule with mainstream-framework default constants.

    Adam: beta1=0.9, beta2=0.999, eps=1e-7. RMSProp: rho=0.9, eps=1e-7.
    SGD has no momentum.
    """

    def __init__(self, kind: str, learning_rate: float, beta1=0.9, beta2=0.999, rho=0.9, eps=1e-7):
        if kind not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {kind!r}; expected one of {OPTIMIZERS}")
        if learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        for name, v in (("beta1", beta1), ("beta2", beta2), ("rho", rho)):
            if not 0 <= v < 1:
                raise ValueError(f"{name} must be in [0, 1)")
        self.kind = kind
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.rho, self.eps = beta1, beta2, rho, eps
        self.state = OptimizerState()

    def _buffers(self, name, param):
        bufs = self.state.buffers.get(name)
        if bufs is None:
            if self.kind == "adam":
                bufs = {"m": np.zeros_like(param), "v": np.zeros_like(param)}
            elif self.kind == "rmsprop":
                bufs = {"ms": np.zeros_like(param)}
            else:
                bufs = {}
            self.state.buffers[name] = bufs
        for b, arr in bufs.items():
            if arr.shape != param.shape:
                raise ValueError(f"optimizer buffer {name}.{b} has shape {arr.shape}, parameter has {param.shape}")
        return bufs

    def step(self, params: dict, grads: dict) -> None:
        """Update ``params`` in place from ``grads`` (matching names)."""
        self.state.step += 1
        t = self.state.step
        lr = self.learning_rate
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
            bufs = self._buffers(name, p)
            if self.kind == "sgd":
                p -= lr * g
            elif self.kind == "rmsprop":
                ms = bufs["ms"]
                ms *= self.rho
                ms += (1 - self.rho) * g * g
                p -= lr * g / (np.sqrt(ms) + self.eps)
            else:
                m, v = bufs["m"], bufs["v"]
                m *= self.beta1
                m += (1 - self.beta1) * g
                v *= self.beta2
                v += (1 - self.beta2) * g * g
                m_hat = m / (1 - self.beta1**t)
                v_hat = v / (1 - self.beta2**t)
                p -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return self.state.to_dict()

    def load_state_dict(self, d: dict) -> None:
        self.state = OptimizerState.from_dict(d)
