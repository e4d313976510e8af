"""Restored-text + text-model baseline: prompt rendering and a bounded,
resumable request loop against a chat-style HTTP endpoint."""

from __future__ import annotations

import json
import logging
import os
import time
import urllib.error
import urllib.request
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from string import Template
from typing import Callable, Mapping, Protocol, Sequence

from .annotation import FactBase
from .qa import QaItem
from .restore import RestoredText

logger = logging.getLogger(__name__)

OPTION_LABELS = "ABCD"


class BaselineError(RuntimeError):
    pass


class AuthError(BaselineError):
    """Credentials rejected or missing; the run is aborted."""


class PromptError(BaselineError):
    pass


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str
    token_env: str | None = None  # name of the environment variable holding the token
    max_in_flight: int = 4
    timeout: float = 60.0
    max_attempts: int = 3
    backoff_base: float = 1.0
    response_field: str = "text"  # dotted path into the response JSON

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    @classmethod
    def load(cls, path: str | Path) -> "EndpointConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        for secret in ("token", "api_key"):
            if secret in data:
                raise ValueError(f"{secret!r} must not be stored in the endpoint file; use token_env")
        return cls(**data)


@dataclass(frozen=True)
class PromptRecord:
    qa_id: str
    prompt: str
    template: str


def load_template(name: str, prompt_dir: str | Path | None = None) -> Template:
    if prompt_dir is not None:
        return Template(Path(prompt_dir, f"{name}.txt").read_text(encoding="utf-8"))
    text = resources.files("esra").joinpath(f"data/prompts/{name}.txt").read_text("utf-8")
    return Template(text)


def build_prompt(
    document: str | RestoredText,
    qa: QaItem,
    facts: FactBase | None = None,
    distractor_context: bool = False,
    prompt_dir: str | Path | None = None,
) -> PromptRecord:
    """Render the prompt for one item. Items carrying context ids use the
    context template; the others see only the report and the question."""
    doc_text = document.text if isinstance(document, RestoredText) else document
    options = ""
    if qa.options is not None:
        options = "Options:\n" + "\n".join(
            f"{OPTION_LABELS[i]}. {o}" for i, o in enumerate(qa.options)
        ) + "\n"

    if not qa.context_ids:
        name = "report_qa"
        tpl = load_template(name, prompt_dir)
        prompt = tpl.substitute(document=doc_text, question=qa.question, options=options)
        if options:
            prompt = prompt.rstrip("\n") + "\n" + options
        return PromptRecord(qa.qa_id, prompt, name)

    if facts is None:
        raise PromptError(f"{qa.qa_id} needs context but no fact base was given")
    ctx_facts = []
    for cid in qa.context_ids:
        if cid not in facts:
            raise PromptError(f"unknown context id {cid!r} in {qa.qa_id}")
        ctx_facts.append(facts[cid])
    if distractor_context and qa.options is not None:
        for title in qa.options:
            f = facts.by_title(title)
            if f is not None and f not in ctx_facts:
                ctx_facts.append(f)
    context = "\n".join(f"- {f.title}: {f.description}" for f in ctx_facts)
    name = "context_qa"
    tpl = load_template(name, prompt_dir)
    prompt = tpl.substitute(
        document=doc_text, context=context, question=qa.question, options=options
    )
    return PromptRecord(qa.qa_id, prompt, name)


# ---------------------------------------------------------------- clients


class ChatClient(Protocol):
    def complete(self, prompt: str) -> str: ...


def _dig(obj, path: str):
    for part in path.split("."):
        obj = obj[int(part)] if isinstance(obj, list) else obj[part]
    return obj


class HttpChatClient:
    """POSTs ``{"model", "messages": [{"role", "content"}]}`` and reads the
    reply from ``config.response_field``."""

    def __init__(self, config: EndpointConfig):
        self.config = config
        self._token = None
        if config.token_env:
            self._token = os.environ.get(config.token_env)
            if not self._token:
                raise AuthError(f"environment variable {config.token_env} is not set")

    def complete(self, prompt: str) -> str:
        body = json.dumps(
            {"model": self.config.model, "messages": [{"role": "user", "content": prompt}]}
        ).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self._token:
            headers["Authorization"] = f"Bearer {self._token}"
        req = urllib.request.Request(self.config.base_url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.config.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            if exc.code in (401, 403):
                raise AuthError(f"endpoint rejected credentials (HTTP {exc.code})") from exc
            raise
        text = _dig(payload, self.config.response_field)
        return "" if text is None else str(text)


# ---------------------------------------------------------------- batch


@dataclass
class RunStats:
    completed: int = 0
    skipped: int = 0
    failed: int = 0
    attempts: dict[str, int] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)


def _done_ids(path: Path) -> set[str]:
    if not path.exists():
        return set()
    done = set()
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        try:
            done.add(json.loads(line)["qa_id"])
        except (json.JSONDecodeError, KeyError):
            # a torn final line from an interrupted run; it will be redone
            continue
    return done


def _call_with_retry(client, prompt, config: EndpointConfig, sleep) -> tuple[str, int, str | None]:
    last = None
    for attempt in range(1, config.max_attempts + 1):
        try:
            return client.complete(prompt), attempt, None
        except AuthError:
            raise
        except Exception as exc:  # noqa: BLE001 - any transport failure is retried
            last = exc
            logger.debug("attempt %d failed: %s", attempt, exc)
            if attempt < config.max_attempts:
                sleep(config.backoff_base * 2 ** (attempt - 1))
    return "", config.max_attempts, repr(last)


def run_batch(
    bank: Sequence[QaItem],
    docs: Mapping[str, str],
    client: ChatClient | None,
    out_path: str | Path,
    config: EndpointConfig,
    facts: FactBase | None = None,
    dry_run: bool = False,
    sleep: Callable[[float], None] = time.sleep,
    limit: int | None = None,
) -> RunStats:
    """Send every pending item to the model and append predictions as JSONL.

    Items already present in ``out_path`` are skipped, so an interrupted run
    can be resumed. ``limit`` stops after that many new items. With
    ``dry_run`` the rendered prompts are written instead and no request is
    made.
    """
    out_path = Path(out_path)
    missing = sorted({q.image_id for q in bank} - set(docs))
    if missing:
        raise BaselineError(f"no restored text for images: {', '.join(missing)}")

    if dry_run:
        chosen = bank if limit is None else bank[:limit]
        with out_path.open("w", encoding="utf-8") as fh:
            for qa in chosen:
                rec = build_prompt(docs[qa.image_id], qa, facts)
                fh.write(json.dumps(asdict(rec), ensure_ascii=False) + "\n")
        return RunStats(skipped=len(chosen))

    if client is None:
        raise BaselineError("no client configured")
    stats = RunStats()
    done = _done_ids(out_path)
    todo = [q for q in bank if q.qa_id not in done]
    stats.skipped = len(bank) - len(todo)
    if limit is not None:
        todo = todo[:limit]

    # prompts are rendered up front so a bad context id fails before any request
    prompts = {q.qa_id: build_prompt(docs[q.image_id], q, facts).prompt for q in todo}

    def work(qa: QaItem):
        return qa.qa_id, *_call_with_retry(client, prompts[qa.qa_id], config, sleep)

    torn = out_path.exists() and out_path.stat().st_size > 0 and not out_path.read_bytes().endswith(b"\n")
    with out_path.open("a", encoding="utf-8") as fh, ThreadPoolExecutor(config.max_in_flight) as pool:
        if torn:
            fh.write("\n")
        pending = set()
        queue = list(todo)
        try:
            while queue or pending:
                while queue and len(pending) < config.max_in_flight:
                    pending.add(pool.submit(work, queue.pop(0)))
                finished, pending = wait(pending, return_when=FIRST_COMPLETED)
                for fut in finished:
                    qa_id, text, attempts, error = fut.result()
                    stats.attempts[qa_id] = attempts
                    if error is not None:
                        stats.failed += 1
                        stats.errors[qa_id] = error
                        logger.error("%s failed after %d attempts: %s", qa_id, attempts, error)
                    else:
                        stats.completed += 1
                        logger.info("%s done in %d attempt(s)", qa_id, attempts)
                    # only this thread writes, so lines never interleave
                    fh.write(json.dumps({"qa_id": qa_id, "text": text}, ensure_ascii=False) + "\n")
                    fh.flush()
        except AuthError:
            for fut in pending:
                fut.cancel()
            raise
    return stats
