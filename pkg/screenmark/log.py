import logging
import sys
from typing import List, Optional, TextIO

import structlog
from structlog.stdlib import ProcessorFormatter
from structlog.types import Processor


class StderrHandler(logging.StreamHandler):  # type: ignore[type-arg]
    """Stream handler bound to whatever ``sys.stderr`` is when a record is emitted."""

    def __init__(self) -> None:
        super().__init__()

    @property  # type: ignore[override]
    def stream(self) -> TextIO:
        return sys.stderr

    @stream.setter
    def stream(self, value: TextIO) -> None:
        pass


def configure_logging(level: str = "INFO", json_output: Optional[bool] = None) -> None:
    """Install the structlog pipeline on stderr.

    Console rendering is used on a TTY and JSON otherwise, unless
    ``json_output`` forces one or the other. structlog events and records
    emitted through the stdlib ``logging`` module share one handler and
    are rendered by the same processors.
    """
    if json_output is None:
        json_output = not sys.stderr.isatty()

    numeric_level = logging.getLevelNamesMapping().get(level.upper(), logging.INFO)

    shared_processors: List[Processor] = [
        structlog.stdlib.add_log_level,
        structlog.processors.CallsiteParameterAdder(
            {
                structlog.processors.CallsiteParameter.FILENAME,
                structlog.processors.CallsiteParameter.LINENO,
            }
        ),
        structlog.processors.TimeStamper(fmt="%Y-%m-%d %H:%M:%S.%f"),
    ]

    if json_output:
        renderer: Processor = structlog.processors.JSONRenderer(indent=1, sort_keys=True)
    else:
        renderer = structlog.dev.ConsoleRenderer()

    structlog.configure(
        processors=shared_processors + [ProcessorFormatter.wrap_for_formatter],
        wrapper_class=structlog.make_filtering_bound_logger(numeric_level),
        logger_factory=structlog.stdlib.LoggerFactory(),
        context_class=dict,
        cache_logger_on_first_use=False,
    )

    formatter = ProcessorFormatter(
        # These run ONLY on `logging` entries that do NOT originate within
        # structlog.
        foreign_pre_chain=shared_processors,
        # These run on ALL entries after the pre_chain is done.
        processors=[ProcessorFormatter.remove_processors_meta, renderer],
    )

    handler = StderrHandler()
    handler.setFormatter(formatter)

    root = logging.getLogger()
    root.handlers = [handler]
    root.setLevel(numeric_level)
