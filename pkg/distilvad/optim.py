"""
DistilVAD - Adam optimizer

Adam with L2 weight decay folded into the gradient, bias-corrected moments
and state keyed by parameter name so it can be checkpointed.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from distilvad.exceptions import CheckpointError

# Configure logger
logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """
    Optimizer state for one parameter set.

    Attributes:
        lr (float): learning rate
        weight_decay (float): L2 coefficient added to the gradient
        beta1, beta2 (float): moment decay rates
        eps (float): denominator floor
        step (int): number of updates applied so far
        m, v (dict): first/second moment buffers keyed by parameter name
    """

    lr: float = 1e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def state_arrays(self, prefix):
        """Flatten moments and the step counter into checkpoint entries."""
        arrays = {f"{prefix}.step": np.array([self.step], dtype=np.float64)}
        for name in self.m:
            arrays[f"{prefix}.m.{name}"] = self.m[name]
            arrays[f"{prefix}.v.{name}"] = self.v[name]
        return arrays

    def load_arrays(self, arrays, prefix):
        """
        Restore moments and the step counter from checkpoint entries.

        Raises:
            CheckpointError: when the checkpoint holds no optimizer state under ``prefix``
        """
        if f"{prefix}.step" not in arrays:
            raise CheckpointError(f"checkpoint has no optimizer state {prefix}.step")
        self.step = int(round(float(np.asarray(arrays[f"{prefix}.step"]).reshape(-1)[0])))
        self.m, self.v = {}, {}
        m_prefix, v_prefix = f"{prefix}.m.", f"{prefix}.v."
        for key, value in arrays.items():
            if key.startswith(m_prefix):
                self.m[key[len(m_prefix):]] = np.array(value, copy=True)
            elif key.startswith(v_prefix):
                self.v[key[len(v_prefix):]] = np.array(value, copy=True)


def _named(params):
    if isinstance(params, dict):
        return list(params.items())
    params = list(params)
    if params and not isinstance(params[0], tuple):
        return [(str(i), p) for i, p in enumerate(params)]
    return params


def adam_step(params, state):
    """
    Apply one Adam update in place.

    Parameters without a gradient are skipped, as in the usual frameworks.

    Args:
        params (dict or iterable): name -> Parameter mapping, (name, Parameter)
            pairs, or a bare list of parameters
        state (AdamState): optimizer state, mutated
    """
    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step
    for name, p in _named(params):
        if p.grad is None:
            continue
        g = p.grad
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape:
            raise ValueError(f"moment buffer for {name} has shape {m.shape}, parameter {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        p.data = (p.data - update).astype(p.dtype, copy=False)
