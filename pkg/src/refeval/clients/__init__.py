from .base import (
    BaseClient,
    CaptionClient,
    ClientBundle,
    ClientConfig,
    ClientError,
    DetectClient,
    EmbedClient,
    InferenceClient,
    InpaintClient,
    InpaintParams,
    PerturbClient,
    QualityClient,
    ResponseCache,
    TokenDist,
    cache_key,
    require_single_subject_span,
)
from .mocks import (
    MockCaptionClient,
    MockDetectClient,
    MockEmbedClient,
    MockInpaintClient,
    MockPerturbClient,
    MockQualityClient,
    OracleInferenceClient,
)

__all__ = [
    "BaseClient",
    "CaptionClient",
    "ClientBundle",
    "ClientConfig",
    "ClientError",
    "DetectClient",
    "EmbedClient",
    "InferenceClient",
    "InpaintClient",
    "InpaintParams",
    "PerturbClient",
    "QualityClient",
    "ResponseCache",
    "TokenDist",
    "cache_key",
    "require_single_subject_span",
    "MockCaptionClient",
    "MockDetectClient",
    "MockEmbedClient",
    "MockInpaintClient",
    "MockPerturbClient",
    "MockQualityClient",
    "OracleInferenceClient",
]
