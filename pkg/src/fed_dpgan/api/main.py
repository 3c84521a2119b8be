"""FastAPI parameter server for running federated rounds across processes."""

import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI, HTTPException, Request, Response

from fed_dpgan.config import get_settings
from fed_dpgan.errors import ParameterError, ProtocolError, StructuralError
from fed_dpgan.federated import decode_update
from fed_dpgan.nn import decode_params, encode_params
from fed_dpgan.schemas import AggregateResponse, UpdateAccepted
from fed_dpgan.services import UpdateStore

logger = logging.getLogger(__name__)

OCTET_STREAM = "application/octet-stream"

# Global instance
update_store = UpdateStore()


@asynccontextmanager
async def lifespan(_app: FastAPI):
    """Configure logging on startup."""
    settings = get_settings()
    logging.basicConfig(level=settings.log_level)
    logger.info("aggregation server starting")
    yield


app = FastAPI(
    title="fed-dpgan",
    description="Parameter server for federated DPGAN simulations",
    version="0.1.0",
    lifespan=lifespan,
)


@app.get("/health")
async def health():
    """Health check endpoint."""
    return {"status": "ok"}


@app.put("/v1/global")
async def init_global(request: Request):
    """Install a new global parameter vector and reset to round 0."""
    body = await request.body()
    try:
        theta, end = decode_params(body)
        if end != len(body):
            raise StructuralError(f"{len(body) - end} trailing bytes after the parameters")
    except StructuralError as e:
        raise HTTPException(status_code=400, detail=f"Bad parameter vector: {e}")
    state = update_store.init_global(theta)
    return {"round": state.round, "n_params": len(state.theta)}


@app.get("/v1/global")
async def fetch_global():
    state = update_store.get()
    if state is None:
        raise HTTPException(status_code=404, detail="No global model. PUT /v1/global first.")
    return Response(
        content=encode_params(state.theta),
        media_type=OCTET_STREAM,
        headers={"X-Round": str(state.round)},
    )


@app.post("/v1/updates", status_code=202, response_model=UpdateAccepted)
async def push_update(request: Request):
    """Queue one client's trained parameters for the current round."""
    if update_store.get() is None:
        raise HTTPException(status_code=404, detail="No global model. PUT /v1/global first.")
    try:
        msg = decode_update(await request.body())
        pending = update_store.add_update(msg)
    except (StructuralError, ParameterError) as e:
        raise HTTPException(status_code=400, detail=f"Bad update: {e}")
    except ProtocolError as e:
        raise HTTPException(status_code=409, detail=str(e))
    logger.info(f"update from client {msg.client_id} for round {msg.round} ({pending} pending)")
    return UpdateAccepted(client_id=msg.client_id, round=msg.round, pending=pending)


@app.post("/v1/aggregate", response_model=AggregateResponse)
async def aggregate():
    """FedAvg over the pending updates; advances the round."""
    if update_store.get() is None:
        raise HTTPException(status_code=404, detail="No global model. PUT /v1/global first.")
    try:
        result = update_store.aggregate()
    except ProtocolError as e:
        raise HTTPException(status_code=409, detail=str(e))
    return AggregateResponse(round=result.round, clients=result.clients, n_total=result.n_total)
