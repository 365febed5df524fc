import numpy as np
import pytest

from capgru.params import (
    LayerParams,
    Model,
    NetworkConfig,
    VoltageParams,
    calibrate_layer,
    solve_adc_for_gain,
)


@pytest.fixture
def volt():
    return VoltageParams()


def make_layer(
    rng,
    n_in,
    n_out,
    volt=None,
    target_alpha=2.0,
    random_h_init=False,
    b_z=None,
    b_h=None,
    w_h=None,
    w_z=None,
):
    """One calibrated random layer with optional pinned fields."""
    volt = volt or VoltageParams()
    adc = solve_adc_for_gain(target_alpha, volt, n_in)
    layer = LayerParams(
        w_h=w_h if w_h is not None else rng.integers(0, 4, size=(n_out, n_in)),
        w_z=w_z if w_z is not None else rng.integers(0, 4, size=(n_out, n_in)),
        b_z=b_z if b_z is not None else rng.integers(0, 64, size=n_out),
        b_h=b_h if b_h is not None else rng.integers(0, 64, size=n_out),
        adc=adc,
        h_init=rng.uniform(-1, 1, size=n_out) if random_h_init else None,
    )
    return calibrate_layer(layer, volt)


def make_model(rng, sizes, volt=None, **kw):
    layers = [
        make_layer(rng, a, b, volt, **kw) for a, b in zip(sizes[:-1], sizes[1:])
    ]
    return Model(NetworkConfig(tuple(sizes)), layers)


def random_bits(rng, T, n, p=0.5):
    return (rng.random((T, n)) < p).astype(np.float64)
