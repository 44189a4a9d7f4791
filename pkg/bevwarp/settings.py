import os

from dotenv import load_dotenv

load_dotenv()


# Pull values from environment variables (a local .env file is honoured)
LOG_LEVEL = os.getenv("BEVWARP_LOG_LEVEL", "INFO").upper()

# Root directory used when a command is called without --out
DEFAULT_OUT_DIR = os.getenv("BEVWARP_OUT_DIR", "out")

# Process pool size for bench; 1 keeps everything in-process
WORKERS = max(1, int(os.getenv("BEVWARP_WORKERS", "1")))
