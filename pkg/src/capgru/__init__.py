"""capgru: switched-capacitor gated-RNN core simulation stack.

Subpackages:

* ``codes``    quantization primitives (weight/bias/gate code maps)
* ``params``   layer, network, voltage and converter configuration
* ``ideal``    value-domain engine (sequential and scan forward passes)
* ``circuit``  charge-domain core simulator (must match ``ideal`` exactly)
* ``energy``   per-step dissipation accounting and worst-case bounds
* ``modelio``  model/dataset/trace serialization
* ``train``    desk-scale quantization-aware training
* ``cli``      command-line front end
"""

__version__ = "0.1.0"
