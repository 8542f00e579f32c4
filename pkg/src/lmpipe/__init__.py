"""Corpus-to-tokenizer pre-training data pipeline.

Submodules are imported lazily by the CLI so light commands stay light;
import them directly (lmpipe.corpus, lmpipe.bpe, ...) for library use.
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
