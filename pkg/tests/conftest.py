from typing import Dict, List, Optional

import numpy as np
import pytest
from fastapi.testclient import TestClient

from app.core.auth import PoolRegistry
from app.core.rng import Rng
from app.main import app
from app.schemas.scenario import ScenarioConfig, render_config


def chain_nodes(relays: int) -> List[Dict]:
    carols = ["carol"] if relays == 1 else [f"carol{i}" for i in range(1, relays + 1)]
    nodes = [{"id": "alice", "role": "ENDPOINT", "attachment": carols[0]}]
    nodes.extend({"id": carol, "role": "RELAY"} for carol in carols)
    nodes.append({"id": "bob", "role": "ENDPOINT", "attachment": carols[-1]})
    return nodes


@pytest.fixture
def make_scenario():
    """alice 连在第一个 Carol，bob 连在最后一个 Carol；relays=1 时唯一的 Carol 叫 carol"""

    def make(
            relays: int = 1,
            sessions: Optional[List[Dict]] = None,
            rounds: int = 2000,
            extra_nodes: Optional[List[Dict]] = None,
            links: Optional[List[Dict]] = None,
            **fields,
    ) -> ScenarioConfig:
        nodes = chain_nodes(relays) + list(extra_nodes or [])
        data = {
            "name": "test",
            "seed": 7,
            "network": {"nodes": nodes, "links": links or []},
            "sessions": sessions if sessions is not None else [{"alice": "alice", "bob": "bob", "rounds": rounds}],
        }
        data.update(fields)
        return ScenarioConfig.model_validate(data)

    return make


@pytest.fixture
def scenario_yaml(make_scenario):
    def to_yaml(**kwargs) -> str:
        return render_config(make_scenario(**kwargs))

    return to_yaml


@pytest.fixture
def full_mesh_pools():
    """给路径上任意两点都建一个池"""

    def make(nodes, bits: int = 16384, seed: int = 11) -> PoolRegistry:
        registry = PoolRegistry(tag_bits=64, tag_key_cost=128)
        rng = Rng(seed)
        for i, a in enumerate(nodes):
            for b in nodes[i + 1:]:
                registry.add(a, b, rng.derive(f"{a}:{b}").bits(bits))
        return registry

    return make


@pytest.fixture
def random_bits():
    def make(n: int, seed: int = 3) -> np.ndarray:
        return Rng(seed).bits(n)

    return make


@pytest.fixture
def client():
    return TestClient(app)
