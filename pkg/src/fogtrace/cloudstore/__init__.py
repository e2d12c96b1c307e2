"""Token-protected, content-addressed trace repository and its client."""

from .client import CloudClient, CloudUnreachableError
from .httpd import CloudStoreHTTPServer, parse_multipart
from .service import (
    AuthToken,
    ClientAccount,
    CloudError,
    CloudStoreService,
    ForbiddenError,
    InvalidCredentialsError,
    ManifestInvalidError,
    MissingPartError,
    NotFoundError,
    StorageFullError,
    TokenExpiredError,
    TraceMetadata,
    UnauthorizedError,
    storage_key,
)

__all__ = [
    "AuthToken",
    "ClientAccount",
    "CloudClient",
    "CloudError",
    "CloudStoreHTTPServer",
    "CloudStoreService",
    "CloudUnreachableError",
    "ForbiddenError",
    "InvalidCredentialsError",
    "ManifestInvalidError",
    "MissingPartError",
    "NotFoundError",
    "StorageFullError",
    "TokenExpiredError",
    "TraceMetadata",
    "UnauthorizedError",
    "parse_multipart",
    "storage_key",
]
