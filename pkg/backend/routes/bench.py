from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field
from typing import List, Optional
import logging

from models.errors import VerificationError
from models.schemas import EngineConfig, ScenarioSpec
from services.benchmark_service import default_configs, get_benchmark_service

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/bench", tags=["benchmarks"])


class AblationRequest(BaseModel):
    scenario: ScenarioSpec
    configs: Optional[List[EngineConfig]] = None
    steps: Optional[int] = Field(None, ge=1)


class ScalabilityRequest(BaseModel):
    scenario: ScenarioSpec
    variable: str
    values: List[float] = Field(..., min_length=1)
    configs: Optional[List[EngineConfig]] = None
    steps: Optional[int] = Field(None, ge=1)


class TradeoffRequest(BaseModel):
    scenario: ScenarioSpec
    knob: str
    values: List[float] = Field(..., min_length=1)
    config: Optional[EngineConfig] = None
    steps: Optional[int] = Field(None, ge=1)


def _records(frame):
    return frame.astype(object).where(frame.notna(), None).to_dict(orient="records")


@router.post("/ablation")
async def run_ablation(request: AblationRequest):
    """Per-method mean step time and coverage"""
    configs = request.configs or default_configs(request.scenario.kind)
    try:
        report = get_benchmark_service().run_experiment(request.scenario, configs, request.steps)
    except VerificationError:
        raise
    except Exception as e:
        logger.error(f"Error running ablation: {e}")
        raise HTTPException(status_code=500, detail="Benchmark failed")
    return report.to_dict()


@router.post("/scalability")
async def run_scalability(request: ScalabilityRequest):
    values = [int(v) if float(v).is_integer() and request.variable != "change_rate" else v
              for v in request.values]
    try:
        frame = get_benchmark_service().sweep_scalability(request.scenario, request.variable, values,
                                                          request.configs, request.steps)
    except VerificationError:
        raise
    except Exception as e:
        logger.error(f"Error running scalability sweep: {e}")
        raise HTTPException(status_code=500, detail="Benchmark failed")
    return {"variable": request.variable, "rows": _records(frame)}


@router.post("/tradeoff")
async def run_tradeoff(request: TradeoffRequest):
    try:
        frame = get_benchmark_service().sweep_tradeoff(request.scenario, request.knob, request.values,
                                                       request.config, request.steps)
    except VerificationError:
        raise
    except Exception as e:
        logger.error(f"Error running trade-off sweep: {e}")
        raise HTTPException(status_code=500, detail="Benchmark failed")
    return {"knob": request.knob, "rows": _records(frame)}
