"""Self-contained waveform speech-restoration engine.

Subpackages cover tensor autodiff, DSP primitives, neural layers, the
dual-decoder restoration model and its ablation variants, training losses,
distortion simulation, the optimization loop, objective metrics, and a CLI.
"""

__version__ = "0.1.0"
