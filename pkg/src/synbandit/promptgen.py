"""Attribute-aware prompt generation and image-provider client.

Three phases: pull an attribute pool from a language-model provider,
sample attributes into templated prompts, request one image per prompt
from a diffusion provider. Both providers speak a small HTTP contract and
can be mocked from fixture files keyed by request hash, so the pipeline
runs fully offline.

Provider wire contract:
    POST {endpoint}/v1/attributes  {"domain_context": str, "kinds": [str]}
        -> {"attributes": {kind: [values, ...]}}
    POST {endpoint}/v1/images      {"prompt": str, "seed": int}
        -> {"image_base64": str}

Fixture files live at ``{fixture_dir}/{request_hash}.json`` and hold the
response body; a body of ``{"error": "..."}`` simulates a provider
failure. Image requests with no fixture fall back to a deterministic
placeholder image derived from the prompt hash.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import requests

from .images import write_ppm

log = logging.getLogger(__name__)

STYLES = ("artistic", "photorealistic")
NO_ACCIDENT = "no-accident"
PLACEHOLDER_SIZE = 32


class PromptgenError(Exception):
    pass


class ProviderError(PromptgenError):
    pass


class TemplateError(PromptgenError):
    pass


@dataclass
class AttributePool:
    """Per-kind value lists prompts are sampled from."""

    kinds: dict[str, list[str]]

    def validate(self) -> None:
        if not self.kinds:
            raise PromptgenError("attribute pool is empty")
        for kind, values in self.kinds.items():
            if not values:
                raise PromptgenError(f"attribute kind {kind!r} has no values")
            if len(set(values)) != len(values):
                raise PromptgenError(f"attribute kind {kind!r} has duplicate values")

    def to_json(self) -> str:
        return json.dumps({"attributes": self.kinds}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "AttributePool":
        pool = cls(kinds={k: list(v) for k, v in json.loads(text)["attributes"].items()})
        pool.validate()
        return pool


@dataclass
class PromptSpec:
    """One sampled attribute tuple and its rendered prompt."""

    style: str
    attributes: dict[str, str]
    prompt: str


@dataclass
class ProviderConfig:
    endpoint: str = "http://localhost:8080"
    auth_env: str = ""
    timeout: float = 30.0
    mode: str = "fixture"
    fixture_dir: Path | None = None
    max_retries: int = 3
    retry_base_delay: float = 0.5
    parallelism: int = 4

    def __post_init__(self) -> None:
        if self.mode not in ("live", "fixture"):
            raise PromptgenError(f"unknown provider mode {self.mode!r}")
        if self.mode == "fixture":
            if self.fixture_dir is None:
                raise PromptgenError("fixture mode requires a fixture directory")
            self.fixture_dir = Path(self.fixture_dir)


def request_hash(body: Mapping) -> str:
    """Stable key for a request body: first 16 hex chars of its SHA-256."""
    canonical = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _fixture_response(provider: ProviderConfig, body: Mapping) -> dict | None:
    assert provider.fixture_dir is not None
    path = provider.fixture_dir / f"{request_hash(body)}.json"
    if not path.exists():
        return None
    resp = json.loads(path.read_text(encoding="utf-8"))
    if "error" in resp:
        raise ProviderError(f"fixture-simulated provider failure: {resp['error']}")
    return resp


def _post_with_retries(provider: ProviderConfig, path: str, body: Mapping) -> dict:
    headers = {}
    if provider.auth_env:
        token = os.environ.get(provider.auth_env)
        if token is None:
            raise ProviderError(f"auth variable {provider.auth_env} is not set")
        headers["Authorization"] = f"Bearer {token}"
    url = provider.endpoint.rstrip("/") + path
    last_exc: Exception | None = None
    for attempt in range(provider.max_retries):
        try:
            resp = requests.post(url, json=dict(body), headers=headers, timeout=provider.timeout)
            resp.raise_for_status()
            return resp.json()
        except (requests.RequestException, ValueError) as exc:
            last_exc = exc
            if attempt + 1 < provider.max_retries:
                time.sleep(provider.retry_base_delay * 2**attempt)
    raise ProviderError(f"provider request {path} failed after {provider.max_retries} attempts: {last_exc}")


def _request(provider: ProviderConfig, path: str, body: Mapping) -> dict | None:
    """Provider response, or None when a fixture is simply absent."""
    if provider.mode == "fixture":
        return _fixture_response(provider, body)
    return _post_with_retries(provider, path, body)


def extract_attributes(
    domain_context: str,
    provider: ProviderConfig,
    kinds: Sequence[str],
) -> AttributePool:
    """Ask the language-model provider for attribute values per kind.

    Values are deduplicated preserving first occurrence.
    """
    body = {"domain_context": domain_context, "kinds": list(kinds)}
    resp = _request(provider, "/v1/attributes", body)
    if resp is None:
        raise ProviderError(
            f"no fixture for attribute request {request_hash(body)} "
            f"(domain_context={domain_context!r})"
        )
    try:
        raw = resp["attributes"]
        pool = AttributePool(kinds={str(k): list(dict.fromkeys(str(x) for x in v)) for k, v in raw.items()})
    except (KeyError, TypeError, AttributeError) as exc:
        log.error("malformed attribute payload: %r", resp)
        raise ProviderError(f"malformed attribute response: {exc}") from exc
    pool.validate()
    return pool


def default_templates() -> dict:
    text = resources.files("synbandit.data").joinpath("car_templates.json").read_text("utf-8")
    return json.loads(text)


def load_templates(path: Path | str | None = None) -> dict:
    if path is None:
        return default_templates()
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _is_no_accident(value: str) -> bool:
    return value.strip().lower().replace(" ", "-") == NO_ACCIDENT


def render_prompt(templates: Mapping, style: str, attributes: Mapping[str, str]) -> str:
    """Fill the style's template; the no-accident variant drops the accident clause."""
    if style not in templates:
        raise TemplateError(f"no templates for style {style!r}")
    accident = attributes.get("accident")
    variant = "no_accident" if accident is None or _is_no_accident(accident) else "accident"
    template = templates[style].get(variant)
    if template is None:
        raise TemplateError(f"style {style!r} lacks the {variant!r} template")
    try:
        return template.format(**attributes)
    except (KeyError, IndexError) as exc:
        raise TemplateError(f"template placeholder not covered by attributes: {exc}") from exc


def create_prompts(
    pool: AttributePool,
    n: int,
    style: str,
    seed: int = 0,
    templates: Mapping | None = None,
) -> list[PromptSpec]:
    """Sample n attribute tuples (independent uniform per kind) into prompts."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if style not in STYLES:
        raise ValueError(f"style must be one of {STYLES}, got {style!r}")
    pool.validate()
    if templates is None:
        templates = default_templates()
    rng = np.random.default_rng(seed)
    specs = []
    for _ in range(n):
        attrs = {
            kind: pool.kinds[kind][int(rng.integers(len(pool.kinds[kind])))]
            for kind in sorted(pool.kinds)
        }
        specs.append(PromptSpec(style=style, attributes=attrs, prompt=render_prompt(templates, style, attrs)))
    return specs


def _placeholder_image(prompt: str, out_path: Path) -> None:
    seed = int.from_bytes(hashlib.sha256(prompt.encode("utf-8")).digest()[:8], "big")
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, size=(PLACEHOLDER_SIZE, PLACEHOLDER_SIZE, 3), dtype=np.uint8)
    write_ppm(out_path, pixels)


def _generate_one(spec: PromptSpec, provider: ProviderConfig, out_dir: Path) -> dict:
    body = {"prompt": spec.prompt, "seed": int.from_bytes(hashlib.sha256(spec.prompt.encode("utf-8")).digest()[:4], "big")}
    tag = hashlib.sha256(spec.prompt.encode("utf-8")).hexdigest()[:16]
    entry = {
        "prompt": spec.prompt,
        "style": spec.style,
        "attributes": spec.attributes,
        "status": "ok",
        "path": None,
        "error": None,
    }
    try:
        resp = _request(provider, "/v1/images", body)
        if resp is None:
            filename = f"img_{tag}.ppm"
            _placeholder_image(spec.prompt, out_dir / filename)
        else:
            try:
                data = base64.b64decode(resp["image_base64"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ProviderError(f"malformed image response: {exc}") from exc
            filename = f"img_{tag}.png"
            (out_dir / filename).write_bytes(data)
        entry["path"] = filename
    except ProviderError as exc:
        entry["status"] = "failed"
        entry["error"] = str(exc)
    return entry


def generate_images(
    prompts: Sequence[PromptSpec],
    provider: ProviderConfig,
    out_dir: Path | str,
) -> dict:
    """One image file per prompt plus a manifest; failed entries are marked.

    Requests run with bounded parallelism; manifest order follows prompt
    order regardless of completion order.
    """
    if not prompts:
        raise ValueError("no prompts to generate")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=max(1, provider.parallelism)) as pool:
        entries = list(pool.map(lambda s: _generate_one(s, provider, out_dir), prompts))
    for i, entry in enumerate(entries):
        entry["index"] = i
    manifest = {"entries": entries}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    return manifest
