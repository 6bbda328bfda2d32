"""Content-addressed, write-once response cache.

One JSON file per request digest holds the full request beside the response,
so a read can confirm the hit came from an identical request.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
from pathlib import Path
from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    from .llm_client import ChatRequest, ChatResponse

log = logging.getLogger(__name__)


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def cache_key(request: ChatRequest) -> str:
    return hashlib.sha256(canonical_json(request.to_dict()).encode("utf-8")).hexdigest()


class ResponseCache:
    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def path_for(self, digest: str) -> Path:
        return self.directory / f"{digest}.json"

    def get(self, request: ChatRequest) -> ChatResponse | None:
        from .llm_client import ChatResponse

        path = self.path_for(cache_key(request))
        try:
            entry = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        except (OSError, ValueError) as exc:
            log.warning("ignoring unreadable cache entry %s: %s", path, exc)
            return None
        if entry.get("request") != request.to_dict():
            log.warning("cache entry %s holds a different request; treating as miss", path.name)
            return None
        return ChatResponse.from_dict(entry["response"])

    def put(self, request: ChatRequest, response: ChatResponse) -> bool:
        """Store ``response`` unless an entry exists; returns True if written."""
        path = self.path_for(cache_key(request))
        payload = canonical_json({"request": request.to_dict(), "response": response.to_dict()})
        with self._lock:
            if path.exists():
                existing = self.get(request)
                if existing is not None and existing != response:
                    log.warning("cache entry %s differs from the new response; keeping the stored one", path.name)
                return False
            fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=".tmp-", suffix=".json")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as f:
                    f.write(payload)
                os.replace(tmp, path)
            except BaseException:
                Path(tmp).unlink(missing_ok=True)
                raise
        return True

    def __len__(self) -> int:
        return sum(1 for _ in self.directory.glob("*.json"))
