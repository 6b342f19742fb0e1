"""Fast-weight layer kernels: specs, per-step reference ops, fused scans."""
from .backend import backend_name, numba_available, resolve
from .fused import FUSED_VARIANTS, delta_seq, drnn_seq, lt_seq
from .layer import layer_forward
from .specs import (FWP_VARIANTS, RECURRENT_FAST, VARIANTS, DeltaDeltaDims,
                    FastState, LayerSpec, SlowWeights, UpdateRule,
                    init_slow_weights, slow_weight_shapes, update_rule)
from .steps import (baseline_softmax_attention, delta_delta_step,
                    delta_lstm_step, delta_mlp_step, delta_net_step,
                    delta_rnn_step, delta_update, linear_transformer_step,
                    multihead, phi, rdn_step, step_fn, sum_update)

__all__ = [
    "FWP_VARIANTS", "RECURRENT_FAST", "VARIANTS", "FUSED_VARIANTS",
    "DeltaDeltaDims", "FastState", "LayerSpec", "SlowWeights", "UpdateRule",
    "init_slow_weights", "slow_weight_shapes", "update_rule",
    "backend_name", "numba_available", "resolve",
    "delta_seq", "drnn_seq", "lt_seq", "layer_forward",
    "baseline_softmax_attention", "delta_delta_step", "delta_lstm_step",
    "delta_mlp_step", "delta_net_step", "delta_rnn_step", "delta_update",
    "linear_transformer_step", "multihead", "phi", "rdn_step", "step_fn",
    "sum_update",
]
