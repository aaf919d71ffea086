from typing import List, Optional

from fastapi import APIRouter
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel, Field

from app.core.netsim import build_network, run_scenario
from app.core.reporting import report_summary
from app.schemas.report import ScenarioReport
from app.schemas.scenario import parse_config, render_config

router = APIRouter()


class ScenarioRequest(BaseModel):
    config: str = Field(description="场景 YAML 文本")
    seed: Optional[int] = Field(None, ge=0, lt=1 << 64, description="覆盖场景中的种子")


class DirectoryRequest(ScenarioRequest):
    carol: str
    requester: str


class ValidationResponse(BaseModel):
    valid: bool
    name: str
    sessions: int
    normalized: str = Field(description="补全默认值后的场景")


class DirectoryEntryResponse(BaseModel):
    endpoint: str
    attachment: str
    can_transmit: bool
    can_receive: bool


class DirectoryResponse(BaseModel):
    carol: str
    entries: List[DirectoryEntryResponse]


@router.post("/validate", response_model=ValidationResponse)
def validate_scenario(request: ScenarioRequest):
    config = parse_config(request.config)
    return ValidationResponse(valid=True, name=config.name, sessions=len(config.sessions), normalized=render_config(config))


@router.post("/run", response_model=ScenarioReport)
def run(request: ScenarioRequest):
    report, _ = run_scenario(parse_config(request.config), request.seed)
    return report


@router.post("/summary", response_class=PlainTextResponse)
def summary(request: ScenarioRequest):
    report, _ = run_scenario(parse_config(request.config), request.seed)
    return report_summary(report)


@router.post("/directory", response_model=DirectoryResponse)
def directory(request: DirectoryRequest):
    network = build_network(parse_config(request.config), request.seed)
    listing = network.fabric.directory_list(request.carol, request.requester)
    return DirectoryResponse(
        carol=listing.carol,
        entries=[DirectoryEntryResponse(**vars(entry)) for entry in listing.entries],
    )
