"""Write hardened stacks in the portable model format.

The JSON layout (canonical key order, integer code arrays, repr floats)
follows docs/model_format.md of the inference repository; see
``constants`` for the quantization grid.
"""

import json

import torch

from qat_export import constants as C
from qat_export.model import GatedStack, quantize_weight


def weight_codes(w):
    q = quantize_weight(w)
    return ((q + 3.0) / 2.0).to(torch.int64)


def bias_codes(beta):
    return torch.clamp(torch.round(beta / C.GATE_BIAS_STEP) + 32, 0, 63).to(torch.int64)


def threshold_codes(theta):
    return torch.clamp(torch.round(32 - theta / C.THETA_SCALE), 0, 63).to(torch.int64)


def model_document(stack: GatedStack) -> dict:
    layers = []
    for block in stack.blocks:
        layers.append(
            {
                "n_in": block.n_in,
                "n_out": block.n_out,
                "w_h": weight_codes(block.w_h).tolist(),
                "w_z": weight_codes(block.w_z).tolist(),
                "b_z": bias_codes(block.beta).tolist(),
                "b_h": threshold_codes(block.theta).tolist(),
                "adc": {
                    "slope_segments": block.slope_segments,
                    "offset_code": 32,
                    "c_dac": block.c_dac,
                },
                "gate_scale": block.alpha,
                "theta_scale": C.THETA_SCALE,
                "h_init": [0.0] * block.n_out,
            }
        )
    return {
        "format_version": C.FORMAT_VERSION,
        "layer_sizes": list(stack.layer_sizes),
        "readout": "last-step-argmax",
        "voltages": dict(C.VOLTAGES),
        "layers": layers,
    }


def dumps_model(stack: GatedStack) -> str:
    return json.dumps(model_document(stack), sort_keys=True, indent=1) + "\n"


def save_model(path, stack: GatedStack):
    with open(path, "w") as f:
        f.write(dumps_model(stack))
