"""
Error handling and logging framework for the Pareto re-ranking engine
Provides centralized logging, the exception hierarchy used across stages,
and stage timing with memory reporting.
"""

import logging
import functools
import time
import traceback
import sys
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List
from pathlib import Path
from datetime import datetime

import psutil

from config import RerankConfig


class RerankLogger:
    """Centralized logging system for re-ranking runs"""

    def __init__(self, config: RerankConfig):
        self.config = config
        self.loggers = {}
        self.setup_logging()

    def setup_logging(self):
        """Setup logging configuration based on config"""
        # Clear existing handlers to avoid duplicates
        logging.getLogger().handlers.clear()

        level = getattr(logging, self.config.log_level.upper(), logging.INFO)
        logging.getLogger().setLevel(level)

        formatter = logging.Formatter(
            fmt='%(asctime)s | %(name)s | %(levelname)s | %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )

        # Console handler (always present)
        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setFormatter(formatter)
        console_handler.setLevel(level)
        logging.getLogger().addHandler(console_handler)

        if self.config.log_to_file:
            try:
                log_path = Path(self.config.log_file_path)
                log_path.parent.mkdir(parents=True, exist_ok=True)

                from logging.handlers import RotatingFileHandler
                file_handler = RotatingFileHandler(
                    self.config.log_file_path,
                    maxBytes=self.config.max_log_size,
                    backupCount=5,
                    encoding='utf-8'
                )
                file_handler.setFormatter(formatter)
                file_handler.setLevel(level)
                logging.getLogger().addHandler(file_handler)

            except Exception as e:
                print(f"Warning: Could not setup file logging: {e}")

        logger = self.get_logger("RerankLogger")
        logger.info(f"Run provenance: seed={self.config.run.seed}, config hash {self.config.config_hash()}, "
                    f"log level {self.config.log_level}, file logging {'on' if self.config.log_to_file else 'off'}")

    def get_logger(self, name: str) -> logging.Logger:
        """Get or create a named logger"""
        if name not in self.loggers:
            self.loggers[name] = logging.getLogger(name)
        return self.loggers[name]


class RerankException(Exception):
    """Base exception for re-ranking errors"""

    exit_code = 1

    def __init__(self, message: str, error_code: str = None, recoverable: bool = False,
                 exit_code: int = None):
        super().__init__(message)
        self.error_code = error_code or "RERANK_ERROR"
        self.recoverable = recoverable
        if exit_code is not None:
            self.exit_code = exit_code
        self.timestamp = datetime.now()


class ConfigurationError(RerankException):
    """Invalid settings or arguments (usage error)"""
    exit_code = 1

    def __init__(self, message: str, key: str = None):
        super().__init__(message, "CONFIG_ERROR")
        self.key = key


class DataError(RerankException):
    """Unreadable, malformed or inconsistent input data"""
    exit_code = 2

    def __init__(self, message: str, path: str = None, offenders: List = None):
        super().__init__(message, "DATA_ERROR")
        self.path = path
        self.offenders = list(offenders or [])


class InvalidSolutionError(RerankException):
    """A recommendation list that violates list validity"""
    exit_code = 2

    def __init__(self, message: str, user: int = None, item: int = None):
        super().__init__(message, "INVALID_SOLUTION")
        self.user = user
        self.item = item


class NumericalError(RerankException):
    """Non-finite values during scorer training or inference"""
    exit_code = 3

    def __init__(self, message: str, diagnostic: Dict = None):
        super().__init__(message, "NUMERICAL_ERROR")
        self.diagnostic = diagnostic or {}


class StageError(RerankException):
    """Failure inside a named pipeline stage; keeps the cause's exit code"""

    def __init__(self, stage: str, cause: Exception):
        exit_code = getattr(cause, 'exit_code', 1)
        super().__init__(f"Stage '{stage}' failed: {cause}", "STAGE_ERROR",
                         exit_code=exit_code)
        self.stage = stage
        self.cause = cause


def handle_exceptions(default_return=None, log_traceback: bool = True):
    """
    Guard an optional side output (debug dumps) so a failure never aborts the run

    The failure is logged as a skipped output with its error code and
    ``default_return`` is returned instead.
    """
    def decorator(func: Callable) -> Callable:
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            logger = logging.getLogger(func.__module__)
            try:
                return func(*args, **kwargs)
            except Exception as e:
                code = e.error_code if isinstance(e, RerankException) else type(e).__name__
                logger.warning(f"Skipped {func.__name__} [{code}]: {e}")
                if log_traceback:
                    logger.debug(traceback.format_exc())
                return default_return

        return wrapper
    return decorator


class StageMonitor:
    """Times pipeline stages and reports process memory"""

    def __init__(self, config: RerankConfig):
        self.config = config
        self.logger = logging.getLogger(self.__class__.__name__)
        self.enabled = config.enable_performance_monitoring
        self.durations: Dict[str, List[float]] = {}
        self.process = psutil.Process()

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        """
        Time a named stage; any exception inside is re-raised as StageError

        Args:
            name: Stage name used in logs and in StageError
        """
        start = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except RerankException as e:
            raise StageError(name, e) from e
        except (ValueError, KeyError, OSError) as e:
            raise StageError(name, e) from e
        finally:
            duration = time.perf_counter() - start
            self.durations.setdefault(name, []).append(duration)
            if self.enabled:
                rss_mb = self.process.memory_info().rss / (1024 * 1024)
                self.logger.info(f"Stage {name}: {duration:.3f}s (rss {rss_mb:.1f} MB)")

    def total(self, name: str) -> float:
        """Total seconds spent in a stage"""
        return float(sum(self.durations.get(name, [])))

    def log_performance_summary(self):
        """Log one line per stage"""
        if not self.enabled or not self.durations:
            return
        self.logger.info("Performance Summary:")
        for name, values in self.durations.items():
            self.logger.info(f"  {name}: {len(values)}x, total {sum(values):.3f}s, max {max(values):.3f}s")


def default_thread_count() -> int:
    """Available parallelism, as seen by psutil"""
    return psutil.cpu_count(logical=True) or 1


def setup_global_logging(config: RerankConfig) -> RerankLogger:
    """Setup global logging system"""
    return RerankLogger(config)
