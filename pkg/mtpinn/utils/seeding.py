from typing import Union

import numpy as np

from mtpinn.utils.error_handlers import DomainError

Label = Union[int, str]


def _spawn_word(label: Label) -> int:
    # Even words for integers, odd for text, so 3 and "3" stay apart
    if isinstance(label, (int, np.integer)) and not isinstance(label, bool) and label >= 0:
        return 2 * int(label)
    return 2 * int.from_bytes(str(label).encode("utf-8"), "big") + 1


def derive_seed(root: int, *labels: Label) -> int:
    """
    Split one root seed into independent sub-seeds

    The labels become the spawn key of a ``numpy.random.SeedSequence`` rooted
    at ``root``, so the same labels always map to the same stream.

    Args:
        root: The run seed given on the command line
        labels: Names identifying the consumer (e.g. "collocation", "feed", 3)

    Returns:
        Non-negative 63-bit integer seed
    """
    if int(root) < 0:
        raise DomainError(f"seed must be non-negative, got {root}")
    sequence = np.random.SeedSequence(entropy=int(root), spawn_key=tuple(_spawn_word(label) for label in labels))
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
