"""Joint and dedicated voice activity / overlapped speech detection with a
hand-built autodiff core, a TCN segmenter and a self-attention channel
combinator for multi-microphone input."""

__version__ = "0.1.0"
