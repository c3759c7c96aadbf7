"""Builds client bundles from a RunConfig, wiring mocks or live adapters."""

from __future__ import annotations

from pathlib import Path

from .assemble import DatasetManifest
from .clients import (
    ClientBundle,
    ClientConfig,
    MockCaptionClient,
    MockDetectClient,
    MockEmbedClient,
    MockInpaintClient,
    MockPerturbClient,
    MockQualityClient,
    OracleInferenceClient,
    ResponseCache,
)
from .config import RunConfig
from .core import DomainError, ImageStore


def make_store(config: RunConfig) -> ImageStore:
    return ImageStore(Path(config.out_dir) / "images")


def make_cache(config: RunConfig) -> ResponseCache:
    return ResponseCache(config.cache_dir or None)


def _client_config(config: RunConfig, name: str) -> ClientConfig:
    return ClientConfig(
        endpoint=config.clients.endpoints.get(name, ""),
        timeout=config.clients.timeout,
        retries=config.clients.retries,
        cache_enabled=config.clients.cache_enabled,
        api_key=config.clients.api_key,
    )


def build_clients(config: RunConfig, store: ImageStore,
                  gold: dict | None = None) -> ClientBundle:
    """Mock bundle by default; live HTTP adapters when mode is "live".

    `gold` feeds the oracle inference mock (triplet key -> (ta, sp)); without
    it the two-token metric is unavailable in mock mode.
    """
    cache = make_cache(config)
    if config.clients.mode == "mock":
        return ClientBundle(
            caption=MockCaptionClient(_client_config(config, "caption"), cache),
            perturb=MockPerturbClient(_client_config(config, "perturb"), cache),
            inpaint=MockInpaintClient(store, _client_config(config, "inpaint"), cache),
            detect=MockDetectClient({}, _client_config(config, "detect"), cache),
            embed=MockEmbedClient(config.clients.embed_dim, config.seed,
                                  _client_config(config, "embed"), cache),
            quality=MockQualityClient(default=True,
                                      config=_client_config(config, "quality"), cache=cache),
            inference=OracleInferenceClient(gold, seed=config.seed,
                                            config=_client_config(config, "inference"),
                                            cache=cache) if gold is not None else None,
        )
    if config.clients.mode == "live":
        from .clients.http import (
            HttpCaptionClient,
            HttpDetectClient,
            HttpEmbedClient,
            HttpInferenceClient,
            HttpInpaintClient,
            HttpPerturbClient,
            HttpQualityClient,
        )

        return ClientBundle(
            caption=HttpCaptionClient(_client_config(config, "caption"), cache),
            perturb=HttpPerturbClient(_client_config(config, "perturb"), cache),
            inpaint=HttpInpaintClient(_client_config(config, "inpaint"), store, cache),
            detect=HttpDetectClient(_client_config(config, "detect"), cache),
            embed=HttpEmbedClient(_client_config(config, "embed"), cache),
            quality=HttpQualityClient(_client_config(config, "quality"), cache),
            inference=HttpInferenceClient(_client_config(config, "inference"), cache),
        )
    raise DomainError(f"unknown client mode {config.clients.mode!r}")


def gold_from_manifest(manifest: DatasetManifest) -> dict:
    """Oracle fixture table keyed by triplet content, from manifest labels."""
    gold = {}
    for t in manifest.triplets:
        key = OracleInferenceClient.triplet_key(t.image_ref, t.image_tgt, t.prompt.text)
        gold[key] = (t.ta_label, t.sp_label)
    return gold
