#!/usr/bin/env python3
"""
Startup script for the online verification backend
"""

import os
import sys
import subprocess
import logging

from dotenv import load_dotenv

# Configure logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


def check_python_version():
    """Check if Python version is compatible"""
    if sys.version_info < (3, 10):
        logger.error("Python 3.10 or higher is required")
        sys.exit(1)
    logger.info(f"Python version: {sys.version}")


def check_environment():
    """Report the engine settings taken from the environment"""
    for var in ["ONLINE_VERIFY_LOG_LEVEL", "ONLINE_VERIFY_SEED", "ONLINE_VERIFY_COVERAGE_SAMPLES",
                "ONLINE_VERIFY_MAX_WORKERS"]:
        value = os.getenv(var)
        if value is None:
            logger.info(f"{var} not set; using the default")
        else:
            logger.info(f"{var}={value}")


def start_server():
    """Start the FastAPI server"""
    host = os.getenv("HOST", "0.0.0.0")
    port = os.getenv("PORT", "8000")
    try:
        logger.info("Starting online verification backend...")
        logger.info(f"API documentation: http://{host}:{port}/docs")

        os.chdir("backend")

        command = [sys.executable, "-m", "uvicorn", "app:app", "--host", host, "--port", port]
        if os.getenv("DEBUG") == "True":
            command.append("--reload")
        subprocess.run(command)

    except KeyboardInterrupt:
        logger.info("Server stopped by user")
    except Exception as e:
        logger.error(f"Failed to start server: {e}")
        sys.exit(1)


def main():
    """Main function"""
    check_python_version()
    load_dotenv()
    check_environment()
    start_server()


if __name__ == "__main__":
    main()
