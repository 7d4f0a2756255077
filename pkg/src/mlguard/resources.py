"""Resolve contract locators to readable resources.

Contracts name resources with absolute-looking locators such as
``/data/eeg_train`` or ``/schema/eeg-10-20-system-256hz``. A resolver maps
those to concrete content. Locators without an extension are also tried
with ``.csv`` and ``.json`` appended, so a contract can say
``/data/eeg_train`` while the fixture on disk is ``data/eeg_train.csv``.
"""

from __future__ import annotations

from pathlib import Path

from .errors import NotFound

_SUFFIXES = ("", ".csv", ".json")


def _candidates(locator: str):
    for suffix in _SUFFIXES:
        yield locator + suffix


class FsResolver:
    """Resolve locators against a filesystem root directory."""

    def __init__(self, root):
        self.root = Path(root)

    def _path(self, locator: str) -> Path | None:
        rel = str(locator).lstrip("/")
        if not rel:
            return None
        for cand in _candidates(rel):
            p = self.root / cand
            if p.is_file():
                return p
        return None

    def exists(self, locator: str) -> bool:
        return self._path(locator) is not None

    def read_text(self, locator: str) -> str:
        p = self._path(locator)
        if p is None:
            raise NotFound(f"no resource for locator {locator!r} under {self.root}")
        return p.read_text(encoding="utf-8")


class MemResolver:
    """In-memory resolver for tests: maps locator strings to text."""

    def __init__(self, entries: dict[str, str] | None = None):
        self.entries = dict(entries or {})

    def _key(self, locator: str) -> str | None:
        for cand in _candidates(str(locator)):
            if cand in self.entries:
                return cand
        return None

    def exists(self, locator: str) -> bool:
        return self._key(locator) is not None

    def read_text(self, locator: str) -> str:
        key = self._key(locator)
        if key is None:
            raise NotFound(f"no resource for locator {locator!r}")
        return self.entries[key]
