import json
import logging
import time
from datetime import datetime
from typing import Callable

from ..config import settings
from ..exceptions import EXIT_OK

logger = logging.getLogger("gnn_autotune")

_configured = False


def configure_logging() -> None:
    """Configure root logging once per process"""
    global _configured
    if _configured:
        return
    logging.basicConfig(
        level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(f"{settings.LOGS_DIR}/gnn_autotune.log"),
            logging.StreamHandler()
        ]
    )
    _configured = True


class LoggingMiddleware:
    def dispatch(self, command: str, handler: Callable[..., int], args) -> int:
        start_time = time.time()

        logger.info(f"Command: {command}")

        exit_code = handler(args)

        process_time = time.time() - start_time

        log_data = {
            "timestamp": datetime.now().isoformat(),
            "command": command,
            "exit_code": exit_code,
            "process_time": round(process_time, 4),
        }

        if exit_code != EXIT_OK:
            logger.error(f"Command failed: {json.dumps(log_data)}")
        else:
            logger.info(f"Command finished: {json.dumps(log_data)}")

        return exit_code
