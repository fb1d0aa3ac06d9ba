"""Gateway for structured extraction calls.

One client wraps prompt templating, schema-validated responses, bounded
retries and a record/replay transcript so the whole extraction suite runs
offline and deterministically. Live mode posts to a single JSON endpoint and
is rate limited by a token bucket; replay ignores the limiter.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
import urllib.error
import urllib.request
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import MissingSlot, ReplayMiss, SchemaViolation, TransportError

_SLOT_RE = re.compile(r"\{([a-z_][a-z0-9_]*)\}")
_FENCE_RE = re.compile(r"```[a-zA-Z]*\n(.*?)```", re.DOTALL)

_CORRECTION = (
    "\n\nThe previous response was invalid: {reason}. "
    "Return only a single fenced JSON code block that conforms to the schema."
)


@dataclass(frozen=True)
class PromptTemplate:
    """Objective-question-explanation-exemplars prompt with 2-4 exemplars."""

    name: str
    objective: str
    question: str
    explanation: str
    exemplars: tuple[tuple[str, str], ...]
    output_schema: str

    def __post_init__(self):
        for part in ("objective", "question", "explanation", "name"):
            if not getattr(self, part).strip():
                raise ValueError(f"template part {part!r} is empty")
        if not 2 <= len(self.exemplars) <= 4:
            raise ValueError("templates carry two to four exemplars")

    def slot_names(self) -> set[str]:
        names = set()
        for part in (self.objective, self.question, self.explanation):
            names.update(_SLOT_RE.findall(part))
        return names


def load_template(name: str) -> PromptTemplate:
    raw = json.loads(resources.files("batmine.assets.prompts").joinpath(f"{name}.json").read_text("utf-8"))
    return PromptTemplate(
        name=raw["name"],
        objective=raw["objective"],
        question=raw["question"],
        explanation=raw["explanation"],
        exemplars=tuple((e["input"], e["output"]) for e in raw["exemplars"]),
        output_schema=raw["output_schema"],
    )


def load_schema(name: str) -> dict:
    return json.loads(resources.files("batmine.assets.schemas").joinpath(f"{name}.json").read_text("utf-8"))


def render_prompt(template: PromptTemplate, slots: dict[str, str]) -> str:
    """Deterministic prompt text; raises :class:`MissingSlot` on unfilled slots."""
    missing = template.slot_names() - set(slots)
    if missing:
        raise MissingSlot(f"missing slots for {template.name}: {sorted(missing)}")

    def fill(text: str) -> str:
        return _SLOT_RE.sub(lambda m: slots[m.group(1)], text)

    lines = [
        f"Objective: {fill(template.objective)}",
        "",
        f"Question: {fill(template.question)}",
        "",
        f"Explanation: {fill(template.explanation)}",
        "",
    ]
    for i, (ex_in, ex_out) in enumerate(template.exemplars, start=1):
        lines.append(f"Example {i} input:")
        lines.append(ex_in)
        lines.append(f"Example {i} output:")
        lines.append("```json")
        lines.append(ex_out)
        lines.append("```")
        lines.append("")
    lines.append("Answer with a single fenced JSON code block.")
    return "\n".join(lines)


def prompt_hash(prompt: str) -> str:
    """sha256 of the prompt with line endings normalized to \\n."""
    normalized = prompt.replace("\r\n", "\n").replace("\r", "\n")
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()


def extract_json_block(text: str):
    """Parse the single fenced JSON block of a response (prose is ignored).

    A bare-JSON response is accepted as well. Returns (value, None) or
    (None, reason) when unparseable.
    """
    blocks = _FENCE_RE.findall(text)
    if len(blocks) > 1:
        return None, "more than one fenced block"
    candidate = blocks[0] if blocks else text
    try:
        return json.loads(candidate), None
    except json.JSONDecodeError as exc:
        return None, f"unparseable JSON ({exc.msg})"


class TokenBucket:
    """Requests-per-minute limiter; the only synchronized gateway state."""

    def __init__(self, per_minute: float, time_fn=time.monotonic, sleep_fn=time.sleep):
        self.capacity = max(1.0, float(per_minute))
        self.rate = self.capacity / 60.0
        self.tokens = self.capacity
        self._time = time_fn
        self._sleep = sleep_fn
        self._last = time_fn()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        """Block until a token is available; returns seconds slept."""
        waited = 0.0
        with self._lock:
            while True:
                now = self._time()
                self.tokens = min(self.capacity, self.tokens + (now - self._last) * self.rate)
                self._last = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return waited
                need = (1.0 - self.tokens) / self.rate
                self._sleep(need)
                waited += need


class ReplayTranscript:
    """Immutable hash->responses mapping loaded from a JSON-lines file.

    Multiple entries with the same hash are consumed in file order, which is
    how retry sequences are replayed.
    """

    def __init__(self, entries: list[tuple[str, str]]):
        self._queues: dict[str, deque[str]] = {}
        for h, response in entries:
            self._queues.setdefault(h, deque()).append(response)
        self._positions: dict[str, int] = {}

    @classmethod
    def load(cls, path: str | Path) -> "ReplayTranscript":
        entries = []
        for line in Path(path).read_text("utf-8").splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            entries.append((row["hash"], row["response"]))
        return cls(entries)

    def fetch(self, prompt: str) -> str:
        h = prompt_hash(prompt)
        queue = self._queues.get(h)
        pos = self._positions.get(h, 0)
        if not queue or pos >= len(queue):
            raise ReplayMiss(f"no transcript entry for prompt hash {h[:12]}…")
        self._positions[h] = pos + 1
        return queue[pos]

    def reset(self) -> None:
        self._positions.clear()


class LiveTransport:
    """POSTs {model, prompt} to a JSON endpoint returning {"text": ...}."""

    def __init__(self, endpoint: str, model: str, api_key: str = "", timeout: float = 60.0):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout = timeout

    def fetch(self, prompt: str) -> str:
        body = json.dumps({"model": self.model, "prompt": prompt}).encode("utf-8")
        req = urllib.request.Request(self.endpoint, data=body, method="POST")
        req.add_header("Content-Type", "application/json")
        if self.api_key:
            req.add_header("Authorization", f"Bearer {self.api_key}")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, json.JSONDecodeError, OSError) as exc:
            raise TransportError(str(exc)) from exc
        if "text" not in payload:
            raise TransportError("endpoint response carries no 'text' field")
        return payload["text"]


class CallableTransport:
    """Wraps any prompt->response callable (used by tests and asset scripts)."""

    def __init__(self, responder):
        self.responder = responder

    def fetch(self, prompt: str) -> str:
        return self.responder(prompt)


@dataclass
class GatewayStats:
    calls: int = 0
    retries: int = 0
    entries_consumed: int = 0


class Gateway:
    """Structured-completion client.

    modes:
      replay  - answer from a transcript, never touches the network
      record  - answer from ``transport`` and append {hash, response} lines
      live    - answer from ``transport`` (rate limited), nothing written
    """

    def __init__(
        self,
        mode: str = "replay",
        transcript: ReplayTranscript | None = None,
        transport=None,
        record_path: str | Path | None = None,
        requests_per_minute: float = 60.0,
        default_retries: int = 2,
        bucket: TokenBucket | None = None,
    ):
        if mode not in ("replay", "record", "live"):
            raise ValueError(f"unknown gateway mode {mode!r}")
        if mode == "replay" and transcript is None:
            raise ValueError("replay mode needs a transcript")
        if mode in ("record", "live") and transport is None:
            raise ValueError(f"{mode} mode needs a transport")
        self.mode = mode
        self.transcript = transcript
        self.transport = transport
        self.record_path = Path(record_path) if record_path else None
        self.default_retries = default_retries
        self.stats = GatewayStats()
        self._bucket = bucket if bucket is not None else TokenBucket(requests_per_minute)
        self._record_lock = threading.Lock()
        self._schema_cache: dict[str, dict] = {}

    def _fetch(self, prompt: str) -> str:
        self.stats.entries_consumed += 1
        if self.mode == "replay":
            return self.transcript.fetch(prompt)
        if self.mode == "live":
            self._bucket.acquire()
        response = self.transport.fetch(prompt)
        if self.mode == "record" and self.record_path is not None:
            line = json.dumps({"hash": prompt_hash(prompt), "response": response}, ensure_ascii=False)
            with self._record_lock:
                with self.record_path.open("a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
        return response

    def _schema(self, ref: str | dict) -> dict:
        if isinstance(ref, dict):
            return ref
        if ref not in self._schema_cache:
            self._schema_cache[ref] = load_schema(ref)
        return self._schema_cache[ref]

    def complete_structured(self, prompt: str, schema: str | dict, retries: int | None = None):
        """Fetch, parse and validate; retry with a fixed correction suffix."""
        schema_obj = self._schema(schema)
        retries = self.default_retries if retries is None else retries
        self.stats.calls += 1
        current = prompt
        attempt = 0
        while True:
            raw = self._fetch(current)
            value, reason = extract_json_block(raw)
            if reason is None:
                try:
                    jsonschema.validate(value, schema_obj)
                    return value
                except jsonschema.ValidationError as exc:
                    reason = exc.message.splitlines()[0]
            if attempt >= retries:
                raise SchemaViolation(f"no valid response after {retries} retries: {reason}")
            attempt += 1
            self.stats.retries += 1
            current = current + _CORRECTION.format(reason=reason)

    def ask(self, template: PromptTemplate, slots: dict[str, str], retries: int | None = None):
        """Render ``template`` with ``slots`` and complete it against its schema."""
        return self.complete_structured(render_prompt(template, slots), template.output_schema, retries)


def replay_gateway(transcript_path: str | Path, **kwargs) -> Gateway:
    return Gateway(mode="replay", transcript=ReplayTranscript.load(transcript_path), **kwargs)
