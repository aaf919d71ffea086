from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    PROJECT_NAME: str = "RelayNet"
    LOG_LEVEL: str = "INFO"

    # 认证标签：每条消息 64 位标签，消耗 128 位一次性密钥
    TAG_BITS: int = 64
    TAG_KEY_COST: int = 128
    INITIAL_POOL_BITS: int = 65536

    # 后处理参数
    ESTIMATION_SAMPLE_FRACTION: float = 0.25
    RECONCILIATION_BLOCK_SIZE: int = 32
    RECONCILIATION_PASSES: int = 6
    VERIFICATION_TAG_BITS: int = 64
    QBER_ABORT_THRESHOLD: float = 0.11

    # Alice-Bob 最终密钥中留作认证密钥的比例
    FINAL_KEY_RESERVE: float = 0.1

    MAX_RETRANSMITS: int = 8
    DEFAULT_ROUNDS: int = 50000

    model_config = SettingsConfigDict(case_sensitive=True, env_prefix="RELAYNET_")


settings = Settings()
