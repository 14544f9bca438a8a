from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field
from typing import Any, Dict, Optional
import logging

from models.errors import VerificationError
from models.network import Network, random_network
from models.schemas import EngineConfig, ScenarioSpec, VerifyLimits
from services.verification_service import get_verification_service

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/verify", tags=["verification"])
network_router = APIRouter(prefix="/network", tags=["networks"])


class VerifyOnceRequest(BaseModel):
    scenario: ScenarioSpec
    t: int = Field(0, ge=0)
    network: Optional[Dict[str, Any]] = None
    limits: Optional[VerifyLimits] = None
    include_branches: bool = False


class VerifyOnlineRequest(BaseModel):
    scenario: ScenarioSpec
    config: EngineConfig = Field(default_factory=EngineConfig)
    steps: Optional[int] = Field(None, ge=0)


class GenerateNetworkRequest(BaseModel):
    in_dim: int = Field(9, ge=1)
    out_dim: int = Field(9, ge=1)
    depth: int = Field(3, ge=1)
    width: int = Field(50, ge=1)
    seed: int = 0


@router.post("/once")
async def verify_once(request: VerifyOnceRequest):
    """Single reach+branch run on one time step of a scenario"""
    net = Network.from_dict(request.network) if request.network else None
    try:
        result = get_verification_service().verify_once(request.scenario, request.t, net, request.limits)
    except VerificationError:
        raise
    except Exception as e:
        logger.error(f"Error in verify-once: {e}")
        raise HTTPException(status_code=500, detail="Verification failed")
    return result.to_dict(branches=request.include_branches)


@router.post("/online")
async def verify_online(request: VerifyOnlineRequest):
    """Stream a scenario through one accelerator configuration"""
    try:
        result = get_verification_service().verify_online(request.scenario, request.config, request.steps)
    except VerificationError:
        raise
    except Exception as e:
        logger.error(f"Error in verify-online: {e}")
        raise HTTPException(status_code=500, detail="Verification failed")
    return result.to_dict()


@network_router.post("/generate")
async def generate_network(request: GenerateNetworkRequest):
    """Seeded random network in the network file format"""
    net = random_network(request.in_dim, request.out_dim, request.depth, request.width, request.seed)
    return {"architecture": list(net.architecture), "network": net.to_dict()}
