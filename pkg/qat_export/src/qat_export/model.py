"""Hardware-constrained recurrent stack in torch, with staged hardening.

The recurrence is diagonal and its gate depends only on the input, so each
layer trains through an associative prefix scan over time (the pair
(1 - z, z * h_tilde) composes as (a2*a1, a2*b1 + b2)); only the binary
activations between layers force layer order. Quantizers enter the forward
pass via the detach trick (straight-through identity), the output
binarization keeps a unit gradient window around its threshold.
"""

import torch
from torch import nn

from qat_export import constants as C


class HardeningFlags:
    def __init__(self, quantize_weights=False, binarize_output=False,
                 hard_sigmoid_gate=False, quantize_gate=False):
        self.quantize_weights = quantize_weights
        self.binarize_output = binarize_output
        self.hard_sigmoid_gate = hard_sigmoid_gate
        self.quantize_gate = quantize_gate

    @classmethod
    def for_variant(cls, variant):
        if variant == "float-baseline":
            return cls()
        if variant == "quantized-weights":
            return cls(quantize_weights=True, binarize_output=True)
        if variant == "fully-hardware":
            return cls(True, True, True, True)
        raise ValueError(f"unknown variant {variant!r}")


def ste(x, quantized):
    """Identity-gradient quantizer (detach trick)."""
    return x + (quantized - x).detach()


def quantize_weight(w):
    return torch.clamp(2.0 * torch.floor(w / 2.0) + 1.0, -3.0, 3.0)


def quantize_gate_bias(beta):
    code = torch.clamp(torch.round(beta / C.GATE_BIAS_STEP) + 32, 0, 63)
    return (code - 32) * C.GATE_BIAS_STEP


def quantize_threshold(theta):
    code = torch.clamp(torch.round(32 - theta / C.THETA_SCALE), 0, 63)
    return -(code - 32) * C.THETA_SCALE


def gate_code(a):
    """Fused hard-sigmoid + 6 b quantizer, exact on code boundaries."""
    return torch.clamp(torch.floor((a * 64.0 + 192.0) / 6.0), 0, 63)


class BinarizeOutput(torch.autograd.Function):
    @staticmethod
    def forward(ctx, h, theta):
        ctx.save_for_backward(h, theta)
        return (h >= theta).to(h.dtype)

    @staticmethod
    def backward(ctx, grad):
        h, theta = ctx.saved_tensors
        window = (torch.abs(h - theta) <= 1.0).to(h.dtype)
        g = grad * window
        dims = tuple(range(g.dim() - 1))
        return g, -g.sum(dim=dims)


class GatedLayer(nn.Module):
    def __init__(self, n_in, n_out, target_alpha=2.0):
        super().__init__()
        self.n_in = n_in
        self.n_out = n_out
        self.w_h = nn.Parameter(torch.randn(n_out, n_in) * 1.5)
        self.w_z = nn.Parameter(torch.randn(n_out, n_in) * 1.5)
        self.beta = nn.Parameter(torch.empty(n_out).uniform_(-3.0, 3.0))
        self.theta = nn.Parameter(torch.zeros(n_out))
        segs, c_dac = C.solve_adc(target_alpha, n_in)
        self.slope_segments = segs
        self.c_dac = c_dac
        self.alpha = C.realized_gain(segs, c_dac, n_in)

    def effective(self, flags: HardeningFlags):
        if flags.quantize_weights:
            wh = ste(self.w_h, quantize_weight(self.w_h))
            wz = ste(self.w_z, quantize_weight(self.w_z))
            beta = ste(self.beta, quantize_gate_bias(self.beta))
            theta = ste(self.theta, quantize_threshold(self.theta))
        else:
            wh, wz, beta, theta = self.w_h, self.w_z, self.beta, self.theta
        return wh, wz, beta, theta

    def forward(self, x, flags: HardeningFlags):
        # x: (B, T, n_in); scan over time, batched over units
        wh, wz, beta, theta = self.effective(flags)
        a = (self.alpha * torch.einsum("bti,ji->btj", x, wz)) / self.n_in + beta
        if flags.hard_sigmoid_gate:
            sig = torch.clamp(a / 6.0 + 0.5, 0.0, 1.0)
        else:
            sig = torch.sigmoid(a)
        if flags.quantize_gate:
            z = ste(sig, gate_code(a) / 64.0)
        else:
            z = sig
        h_tilde = torch.einsum("bti,ji->btj", x, wh) / self.n_in
        h = self._scan(z, h_tilde)
        if flags.binarize_output:
            out = BinarizeOutput.apply(h, theta)
        else:
            out = h
        return h, out

    @staticmethod
    def _scan(z, h_tilde):
        A = 1.0 - z
        B = z * h_tilde
        T = A.shape[1]
        d = 1
        while d < T:
            A_new = A[:, d:] * A[:, :-d]
            B_new = A[:, d:] * B[:, :-d] + B[:, d:]
            A = torch.cat([A[:, :d], A_new], dim=1)
            B = torch.cat([B[:, :d], B_new], dim=1)
            d *= 2
        # initial state is zero, so h_t is just the accumulated offset
        return B

    def clamp_(self):
        with torch.no_grad():
            self.w_h.clamp_(-3.0, 3.0)
            self.w_z.clamp_(-3.0, 3.0)
            self.beta.clamp_(-6.0, 6.0)
            self.theta.clamp_(-8.0, 8.0)


class GatedStack(nn.Module):
    def __init__(self, layer_sizes, target_alpha=2.0):
        super().__init__()
        self.layer_sizes = tuple(layer_sizes)
        self.blocks = nn.ModuleList(
            [GatedLayer(a, b, target_alpha)
             for a, b in zip(layer_sizes[:-1], layer_sizes[1:])]
        )

    def forward(self, x, flags: HardeningFlags):
        for block in self.blocks:
            h, x = block(x, flags)
        return h[:, -1]  # readout: final block state at the last step

    def clamp_(self):
        for block in self.blocks:
            block.clamp_()

    @torch.no_grad()
    def hardened_run(self, x):
        """Deployment-exact forward pass in float64.

        Returns (logits, z_codes per layer, outs per layer); arithmetic
        mirrors the inference engine operation for operation so exported
        models agree bit for bit on gate codes and predictions.
        """
        flags = HardeningFlags.for_variant("fully-hardware")
        x = x.to(torch.float64)
        z_codes = []
        outs = []
        h = None
        for block in self.blocks:
            wh = quantize_weight(block.w_h).to(torch.float64)
            wz = quantize_weight(block.w_z).to(torch.float64)
            beta = quantize_gate_bias(block.beta).to(torch.float64)
            theta = quantize_threshold(block.theta).to(torch.float64)
            a = (block.alpha * torch.einsum("bti,ji->btj", x, wz)) / block.n_in + beta
            zc = gate_code(a)
            z = zc / 64.0
            h_tilde = torch.einsum("bti,ji->btj", x, wh) / block.n_in
            B, T, n = h_tilde.shape
            h = torch.empty_like(h_tilde)
            h_prev = torch.zeros(B, n, dtype=torch.float64)
            for t in range(T):
                h_prev = z[:, t] * h_tilde[:, t] + (1.0 - z[:, t]) * h_prev
                h[:, t] = h_prev
            out = (h >= theta).to(torch.float64)
            z_codes.append(zc.to(torch.int64))
            outs.append(out)
            x = out
        return h[:, -1], z_codes, outs
