import pytest

from gpcplast.config_io import demo_config, parse_config_text
from gpcplast.diagnostics import run_audits
from gpcplast.models import RunConfig
from gpcplast.solver import run_evolution


@pytest.fixture(scope="session")
def demo_cfg():
    return parse_config_text(demo_config(), source="demo")


@pytest.fixture(scope="session")
def coarse_cfg(demo_cfg):
    """演示配置的粗化版本（4×4 网格、10 步、40 个稳定性样本），会话内只求解一次。"""
    return demo_cfg.model_copy(
        update={
            "mesh": demo_cfg.mesh.model_copy(update={"nx": 4, "ny": 4}),
            "loading": demo_cfg.loading.model_copy(update={"steps": 10}),
            "audit": demo_cfg.audit.model_copy(update={"n_samples": 40}),
        }
    )


@pytest.fixture(scope="session")
def coarse_traj(coarse_cfg):
    return run_evolution(coarse_cfg)


@pytest.fixture(scope="session")
def coarse_report(coarse_traj, coarse_cfg):
    return run_audits(coarse_traj, coarse_cfg)


@pytest.fixture
def small_cfg(tmp_path):
    """2×2 网格、4 步、足以触发滑移的面力；用于快速的端到端测试。"""
    return RunConfig.model_validate(
        {
            "mesh": {"nx": 2, "ny": 2},
            "loading": {"g_max": [0.0, 0.2], "steps": 4},
            "audit": {"n_samples": 12},
            "output": {"directory": str(tmp_path / "out"), "field_stride": 2},
        }
    )
