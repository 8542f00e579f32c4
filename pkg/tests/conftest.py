import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make helpers importable

from helpers import german_like_corpus  # noqa: E402

from lmpipe.bpe import train_vocab  # noqa: E402


@pytest.fixture(scope="session")
def small_german_vocab():
    """~50 KB pseudo-German corpus, 300 merges; shared by fuzz suites."""
    docs = german_like_corpus(seed=11, target_bytes=50_000)
    return train_vocab(docs, num_merges=300)


@pytest.fixture()
def corpus_file(tmp_path):
    def write(lines, name="corpus.txt"):
        path = tmp_path / name
        path.write_bytes(b"".join(line.encode("utf-8") + b"\n" for line in lines))
        return path

    return write
