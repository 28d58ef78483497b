"""Small file helpers shared by the writers."""

from contextlib import contextmanager


@contextmanager
def text_out(target):
    """Yield a text handle for a path, or pass an open stream through."""
    if hasattr(target, "write"):
        yield target
    else:
        with open(target, "w", newline="") as fh:
            yield fh
