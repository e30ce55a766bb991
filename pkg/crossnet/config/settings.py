# Configuration module for crossnet
from pydantic_settings import BaseSettings
from typing import Optional


class Settings(BaseSettings):
    # Logging Configuration
    log_level: str = "INFO"
    log_dir: str = "logs"

    # Run configuration file (the only run-config value read from the environment)
    config_path: Optional[str] = None

    class Config:
        env_prefix = "CROSSNET_"
        env_file = ".env"
        case_sensitive = False
        extra = "ignore"


# Create a global settings instance
settings = Settings()
