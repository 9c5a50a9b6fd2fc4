import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

class Settings:
    # Runtime Configuration
    ENVIRONMENT: str = os.getenv("ENVIRONMENT", "development")
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")

    # Experiment Defaults
    DEFAULT_SEED: int = int(os.getenv("DEFAULT_SEED", "0"))
    EVALUATION_WORKERS: int = int(os.getenv("EVALUATION_WORKERS", "1"))

    # Directories
    OUTPUT_ROOT: str = os.getenv("GNN_TUNE_OUTPUT_ROOT", "runs")
    LOGS_DIR: str = os.getenv("LOGS_DIR", "logs")

# Create settings instance
settings = Settings()

# Create directories if they don't exist
os.makedirs(settings.OUTPUT_ROOT, exist_ok=True)
os.makedirs(settings.LOGS_DIR, exist_ok=True)
