"""Full-scale quantization-aware training and cross-runtime export for the
switched-capacitor gated-RNN stack. Talks to the inference side only
through its external interfaces: the .mgru.json model format, the labeled
sequence CSV, the simulate CLI, and the trace CSV schema."""

__version__ = "0.1.0"
