"""Example model server speaking the prediction wire protocol."""

from .server import (
    BadRequest,
    HostedModel,
    ModelLoadError,
    load_hosted_model,
    main,
    make_server,
    predict_probabilities,
    serve,
)

__all__ = [
    "BadRequest",
    "HostedModel",
    "ModelLoadError",
    "load_hosted_model",
    "main",
    "make_server",
    "predict_probabilities",
    "serve",
]
