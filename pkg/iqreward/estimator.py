"""IQ estimators used as the terminal reward signal, plus the estimation service.

Three modes, registered by name:

- ``oracle``: the deterministic IQ rule over the simulator's trouble log
- ``inprocess``: the trained BiGRU model, final system turn
- ``service``: the same model behind a newline-delimited JSON socket

Wire protocol (one JSON object per line, responses in request order per
connection)::

    -> {"id": "ep-1", "turns": [{"system_text": "...", "user_text": "..."}]}
    <- {"id": "ep-1", "iq": 4, "probs": [0.01, 0.02, 0.07, 0.6, 0.3]}
    <- {"id": null, "error": "..."}            (malformed request)

Addresses are ``host:port`` for TCP or ``unix:/path/to.sock``.
"""

from __future__ import annotations

import asyncio
import json
import logging
import socket
import threading
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Optional, Sequence, Union

from pydantic import ValidationError

from .corpus import final_iq
from .errors import EstimatorServiceError
from .iq_model import IqModel, load_params
from .models import AnnotatedDialogue, AnnotatedTurn, EstimateRequest, EstimateResponse, TurnText
from .registry import register

logger = logging.getLogger(__name__)

Address = Union[tuple[str, int], str]


class BaseEstimator(ABC):
    """Maps a finished transcript to an IQ value in 1..5.

    Subclass this, set ``name`` and ``description``, implement estimate().
    """

    name: str = "base"
    description: str = ""

    @abstractmethod
    def estimate(
        self,
        dialogue: AnnotatedDialogue,
        *,
        trouble: Optional[Sequence[bool]] = None,
        episode_id: Optional[str] = None,
    ) -> int:
        ...

    def close(self) -> None:
        pass

    def __enter__(self) -> "BaseEstimator":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()


@register()
class OracleEstimator(BaseEstimator):
    name = "oracle"
    description = "rule-based IQ from the simulator's trouble log"

    def estimate(self, dialogue, *, trouble=None, episode_id=None) -> int:
        if trouble is None:
            raise ValueError(f"{episode_id or dialogue.dialogue_id}: the oracle estimator needs trouble flags")
        if len(trouble) != len(dialogue.turns):
            raise ValueError(
                f"{episode_id or dialogue.dialogue_id}: {len(trouble)} trouble flags for {len(dialogue.turns)} turns"
            )
        return final_iq(trouble)


@register()
class InProcessEstimator(BaseEstimator):
    name = "inprocess"
    description = "BiGRU IQ model evaluated in this process"

    def __init__(self, model: Optional[IqModel] = None, *, model_path: Optional[str] = None):
        if model is None:
            if model_path is None:
                raise ValueError("inprocess estimator needs a model or a model_path")
            model = load_params(model_path)
        self.model = model

    def estimate(self, dialogue, *, trouble=None, episode_id=None) -> int:
        return self.model.predict_final(dialogue).iq


# --- Service ---


def parse_address(address: str) -> Address:
    """``unix:/path`` -> path string, ``host:port`` -> (host, port)."""
    if address.startswith("unix:"):
        path = address[len("unix:") :]
        if not path:
            raise ValueError(f"empty socket path in address {address!r}")
        return path
    host, sep, port = address.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise ValueError(f"address must be host:port or unix:/path, got {address!r}")
    return host, int(port)


def format_address(address: Address) -> str:
    if isinstance(address, str):
        return f"unix:{address}"
    return f"{address[0]}:{address[1]}"


def request_dialogue(request: EstimateRequest) -> AnnotatedDialogue:
    return AnnotatedDialogue(
        dialogue_id=request.id,
        turns=[
            AnnotatedTurn(turn_index=i, system_text=t.system_text, user_text=t.user_text)
            for i, t in enumerate(request.turns)
        ],
    )


def _request_id(line: bytes) -> Optional[str]:
    try:
        data = json.loads(line)
    except ValueError:
        return None
    if isinstance(data, dict) and isinstance(data.get("id"), str):
        return data["id"]
    return None


class EstimatorServer:
    """Asyncio server answering estimation requests with a shared read-only model."""

    def __init__(self, model: IqModel, address: str):
        self.model = model
        self.address = parse_address(address)
        self._server: Optional[asyncio.AbstractServer] = None

    def respond(self, line: bytes) -> EstimateResponse:
        try:
            request = EstimateRequest.model_validate_json(line)
        except ValidationError as exc:
            reason = "; ".join(f"{'.'.join(map(str, e['loc'])) or 'request'}: {e['msg']}" for e in exc.errors())
            return EstimateResponse(id=_request_id(line), error=f"malformed request: {reason}")
        prediction = self.model.predict_final(request_dialogue(request))
        return EstimateResponse(id=request.id, iq=prediction.iq, probs=prediction.probs)

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                if not line.strip():
                    continue
                response = self.respond(line)
                writer.write(response.model_dump_json().encode() + b"\n")
                await writer.drain()
        except ConnectionError as exc:
            logger.debug("client dropped: %s", exc)
        finally:
            writer.close()

    async def start(self) -> Address:
        """Bind and start accepting; returns the bound address."""
        if isinstance(self.address, str):
            self._server = await asyncio.start_unix_server(self._handle, path=self.address)
            bound: Address = self.address
        else:
            host, port = self.address
            self._server = await asyncio.start_server(self._handle, host, port)
            bound = self._server.sockets[0].getsockname()[:2]
        logger.info("IQ estimation service listening on %s", format_address(bound))
        return bound

    async def serve_forever(self) -> None:
        if self._server is None:
            await self.start()
        assert self._server is not None
        async with self._server:
            await self._server.serve_forever()

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None
            if isinstance(self.address, str):
                Path(self.address).unlink(missing_ok=True)
            logger.info("IQ estimation service stopped")


class ServiceThread:
    """Runs an EstimatorServer on its own event loop in a background thread."""

    def __init__(self, model: IqModel, address: str = "127.0.0.1:0"):
        self.server = EstimatorServer(model, address)
        self._loop = asyncio.new_event_loop()
        self._thread = threading.Thread(target=self._loop.run_forever, daemon=True)
        self.address: Optional[str] = None

    def start(self) -> str:
        self._thread.start()
        bound = asyncio.run_coroutine_threadsafe(self.server.start(), self._loop).result()
        self.address = format_address(bound)
        return self.address

    def stop(self) -> None:
        asyncio.run_coroutine_threadsafe(self.server.stop(), self._loop).result()
        self._loop.call_soon_threadsafe(self._loop.stop)
        self._thread.join()
        self._loop.close()

    def __enter__(self) -> "ServiceThread":
        self.start()
        return self

    def __exit__(self, *exc: Any) -> None:
        self.stop()


@register()
class ServiceEstimator(BaseEstimator):
    name = "service"
    description = "IQ model behind the newline-delimited JSON socket service"

    def __init__(self, address: str, timeout: float = 10.0):
        self.address = parse_address(address)
        self.timeout = timeout
        self._sock: Optional[socket.socket] = None
        self._stream: Any = None

    def _connect(self, episode_id: Optional[str]) -> None:
        try:
            if isinstance(self.address, str):
                sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
                sock.settimeout(self.timeout)
                sock.connect(self.address)
            else:
                sock = socket.create_connection(self.address, timeout=self.timeout)
        except OSError as exc:
            raise EstimatorServiceError(
                f"cannot reach estimator at {format_address(self.address)}: {exc}", episode_id
            ) from exc
        self._sock = sock
        self._stream = sock.makefile("rwb")

    def request(self, request: EstimateRequest) -> EstimateResponse:
        """Send one request and wait for its response."""
        if self._stream is None:
            self._connect(request.id)
        try:
            self._stream.write(request.model_dump_json().encode() + b"\n")
            self._stream.flush()
            line = self._stream.readline()
        except (OSError, socket.timeout) as exc:
            self.close()
            raise EstimatorServiceError(f"estimator request failed: {exc}", request.id) from exc
        if not line:
            self.close()
            raise EstimatorServiceError("estimator closed the connection", request.id)
        try:
            response = EstimateResponse.model_validate_json(line)
        except ValidationError as exc:
            raise EstimatorServiceError(f"unparseable estimator response: {exc.errors()[0]['msg']}", request.id) from exc
        if response.error is not None:
            raise EstimatorServiceError(f"estimator error: {response.error}", request.id)
        if response.id != request.id or response.iq is None:
            raise EstimatorServiceError(f"response for {response.id!r} carries no IQ for this request", request.id)
        return response

    def estimate(self, dialogue, *, trouble=None, episode_id=None) -> int:
        request = EstimateRequest(
            id=episode_id or dialogue.dialogue_id,
            turns=[TurnText(system_text=t.system_text, user_text=t.user_text) for t in dialogue.turns],
        )
        response = self.request(request)
        assert response.iq is not None
        return response.iq

    def close(self) -> None:
        if self._stream is not None:
            try:
                self._stream.close()
            finally:
                self._stream = None
        if self._sock is not None:
            self._sock.close()
            self._sock = None


def build_estimator(
    name: str,
    *,
    model_path: Optional[str] = None,
    address: Optional[str] = None,
    timeout: float = 10.0,
) -> BaseEstimator:
    """Create a registered estimator from CLI-style settings."""
    from .registry import get_default_registry

    registry = get_default_registry()
    if name == "inprocess":
        return registry.create(name, model_path=model_path)
    if name == "service":
        if address is None:
            raise ValueError("the service estimator needs estimator_address")
        return registry.create(name, address=address, timeout=timeout)
    return registry.create(name)
