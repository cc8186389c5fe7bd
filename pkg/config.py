"""
gpcplast 的进程级全局配置类。
运行级参数（网格、材料、载荷……）由 TOML 运行配置提供，见 ``gpcplast.config_io``；
这里只放日志、并行度与 JSON-RPC 服务相关的开关，可由根目录 .env 或环境变量覆盖。
"""

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """配置类架构。"""

    # ── 求解器运行时 ────────────────────────────────────────────────────────
    GPCPLAST_THREADS: int = 0  # 单元装配的线程上限；0 = 自动
    DEFAULT_OUTPUT_DIR: str = "runs"

    # ── JSON-RPC 服务 ───────────────────────────────────────────────────────
    HOST: str = "127.0.0.1"
    PORT: int = 8080
    MAX_CONCURRENT_RUNS: int = 1

    # ── 日志 ────────────────────────────────────────────────────────────────
    LOG_LEVEL: str = "INFO"

    # Pydantic Settings 配置
    model_config = SettingsConfigDict(
        env_file=".env", env_file_encoding="utf-8", extra="ignore"
    )


# 导出全局单例
settings = Settings()
