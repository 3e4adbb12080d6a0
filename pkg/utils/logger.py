import os
import logging
from datetime import datetime, timezone
from dotenv import load_dotenv

load_dotenv()

LOG_FILE_NAME = "midinet_events.log"

_console = logging.getLogger("midinet")


def log_dir() -> str:
    # Read on every call so tests and the CLI can redirect the log after import.
    return os.getenv("MIDINET_PERSIST_DIR", ".")


def log_event(source: str, event_type: str, details: str, level: str = "info"):
    directory = log_dir()
    os.makedirs(directory, exist_ok=True)
    timestamp = datetime.now(timezone.utc).isoformat()
    with open(os.path.join(directory, LOG_FILE_NAME), "a", encoding="utf-8") as f:
        f.write(f"[{timestamp}] source={source} event={event_type} level={level} details={details}\n")
    numeric = getattr(logging, level.upper(), logging.INFO)
    if numeric >= logging.WARNING:
        _console.log(numeric, "%s %s: %s", source, event_type, details)
