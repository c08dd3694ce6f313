#!/usr/bin/env python3
"""
ANH simulator logging

Console lines look like the rest of our tools: timestamp, emoji, optional ANSI
colour. Everything goes to stderr so stdout stays clean JSON. Verbosity comes
from the ANH_LOG environment variable.
"""
import logging
import os
import sys
from datetime import datetime
from pathlib import Path
from typing import Optional

SUCCESS = 25
PROGRESS = 22

logging.addLevelName(SUCCESS, "SUCCESS")
logging.addLevelName(PROGRESS, "PROGRESS")

LEVELS = {
    "DEBUG": logging.DEBUG,
    "INFO": logging.INFO,
    "PROGRESS": PROGRESS,
    "SUCCESS": SUCCESS,
    "WARNING": logging.WARNING,
    "ERROR": logging.ERROR,
}

ENV_LEVELS = {
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warning": logging.WARNING,
    "error": logging.ERROR,
    "quiet": logging.CRITICAL + 10,
}

ROOT_NAME = "anh"


class Colors:
    """ANSI color codes for terminal output"""
    HEADER = '\033[95m'
    OKBLUE = '\033[94m'
    OKCYAN = '\033[96m'
    OKGREEN = '\033[92m'
    WARNING = '\033[93m'
    FAIL = '\033[91m'
    ENDC = '\033[0m'
    BOLD = '\033[1m'


class ConsoleFormatter(logging.Formatter):
    emoji_map = {
        "DEBUG": "🔎 ",
        "INFO": "ℹ️ ",
        "PROGRESS": "🔄 ",
        "SUCCESS": "✅ ",
        "WARNING": "⚠️ ",
        "ERROR": "❌ ",
    }
    color_map = {
        "SUCCESS": Colors.OKGREEN,
        "WARNING": Colors.WARNING,
        "ERROR": Colors.FAIL,
        "PROGRESS": Colors.OKCYAN,
    }

    def __init__(self, use_color: bool):
        super().__init__()
        self.use_color = use_color

    def format(self, record: logging.LogRecord) -> str:
        timestamp = datetime.fromtimestamp(record.created).strftime("%H:%M:%S")
        line = f"[{timestamp}] {self.emoji_map.get(record.levelname, '')}{record.getMessage()}"
        color = self.color_map.get(record.levelname)
        if self.use_color and color:
            line = f"{color}{line}{Colors.ENDC}"
        return line


class FileFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        timestamp = datetime.fromtimestamp(record.created).strftime("%Y-%m-%d %H:%M:%S")
        return f"[{timestamp}] {record.levelname}: {record.getMessage()}"


def level_from_env(default: str = "warning") -> int:
    value = os.environ.get("ANH_LOG", default).strip().lower()
    return ENV_LEVELS.get(value, ENV_LEVELS[default])


def setup_logging(level: Optional[int] = None, log_file: Optional[str] = None) -> logging.Logger:
    """Configure the shared 'anh' logger. Safe to call more than once."""
    root = logging.getLogger(ROOT_NAME)
    root.setLevel(level if level is not None else level_from_env())
    root.propagate = False
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()

    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(ConsoleFormatter(use_color=sys.stderr.isatty()))
    root.addHandler(console)

    if log_file:
        try:
            Path(log_file).parent.mkdir(parents=True, exist_ok=True)
            file_handler = logging.FileHandler(log_file, encoding="utf-8")
            file_handler.setFormatter(FileFormatter())
            root.addHandler(file_handler)
        except OSError as e:
            root.warning(f"Could not open log file {log_file}: {e}")
    return root


def get_logger(name: str) -> logging.Logger:
    short = name.split(".")[-1]
    return logging.getLogger(f"{ROOT_NAME}.{short}")


def log(message: str, level: str = "INFO", name: str = "sim") -> None:
    """Log a message at one of INFO/SUCCESS/WARNING/ERROR/PROGRESS/DEBUG"""
    get_logger(name).log(LEVELS.get(level.upper(), logging.INFO), message)


def progress_enabled() -> bool:
    """Progress bars only when stderr is a terminal and logging is not silenced"""
    return sys.stderr.isatty() and level_from_env() <= logging.INFO
