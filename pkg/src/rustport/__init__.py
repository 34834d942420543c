"""C-to-Rust translation pipeline with LLM-driven iterative repair."""

__version__ = "0.1.0"
