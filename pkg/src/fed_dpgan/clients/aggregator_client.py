"""httpx client for the aggregation server."""

import logging
from typing import Optional

import httpx

from fed_dpgan.errors import ProtocolError, StructuralError
from fed_dpgan.federated import ClientUpdateMsg, encode_update
from fed_dpgan.nn import ParameterVector, decode_params, encode_params
from fed_dpgan.schemas import AggregateResponse, UpdateAccepted

logger = logging.getLogger(__name__)

OCTET_STREAM = {"Content-Type": "application/octet-stream"}


class AggregatorClient:
    """Client for the fed-dpgan parameter server.

    Pass ``http`` to reuse a client (a ``fastapi.testclient.TestClient`` works,
    being an ``httpx.Client``); otherwise one is created for ``base_url``.
    """

    def __init__(
        self,
        base_url: str = "http://127.0.0.1:8000",
        http: Optional[httpx.Client] = None,
        timeout: float = 30.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.http = http or httpx.Client(base_url=self.base_url, timeout=timeout)

    def close(self) -> None:
        self.http.close()

    def __enter__(self) -> "AggregatorClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _check(self, response: httpx.Response) -> httpx.Response:
        if response.status_code < 400:
            return response
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        logger.warning(f"{response.request.method} {response.request.url}: {response.status_code} {detail}")
        if response.status_code == 400:
            raise StructuralError(detail)
        raise ProtocolError(f"HTTP {response.status_code}: {detail}")

    def _request(self, method: str, path: str, **kwargs) -> httpx.Response:
        try:
            return self._check(self.http.request(method, path, **kwargs))
        except httpx.TimeoutException as e:
            raise ProtocolError(f"{method} {path} timed out") from e
        except httpx.RequestError as e:
            raise ProtocolError(f"{method} {path} failed: {e}") from e

    def init_global(self, theta: ParameterVector) -> int:
        """Install ``theta`` on the server; returns the round (0)."""
        response = self._request("PUT", "/v1/global", content=encode_params(theta), headers=OCTET_STREAM)
        return int(response.json()["round"])

    def fetch_global(self) -> tuple[ParameterVector, int]:
        response = self._request("GET", "/v1/global")
        theta, _ = decode_params(response.content)
        return theta, int(response.headers["X-Round"])

    def push_update(self, msg: ClientUpdateMsg) -> UpdateAccepted:
        response = self._request("POST", "/v1/updates", content=encode_update(msg), headers=OCTET_STREAM)
        return UpdateAccepted.model_validate(response.json())

    def aggregate(self) -> AggregateResponse:
        return AggregateResponse.model_validate(self._request("POST", "/v1/aggregate").json())
