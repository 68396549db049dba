from typing import Any, Dict
import json
import logging
import os

import pygments
import pygments.formatters
from pygments.lexers import JsonLexer
from pygments.styles import get_style_by_name
from pygments.util import ClassNotFound

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "IFMIMAGE_OUTPUT_ROOT"

# keys echoed in the run history and on the terminal, per results section
HEADLINE_KEYS = (
    "pearson_r",
    "confidence",
    "threshold",
    "empirical_error",
    "sigma_um",
    "fitted_sigma_um",
    "feasible",
    "visibilities",
    "region_difference",
    "masks",
    "exported",
    "difference_total",
)


def resolve_output_dir(out: str) -> str:
    """
    Relative output directories live under $IFMIMAGE_OUTPUT_ROOT when it is set.
    """
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(out):
        return os.path.join(root, out)
    return out


def headline(results: Dict[str, Any]) -> Dict[str, Any]:
    return {key: results[key] for key in HEADLINE_KEYS if key in results}


def get_formatted_summary(color_scheme: str, summary: Dict[str, Any], colorize: bool = True) -> str:
    """
    Returns the run summary as indented JSON, syntax-highlighted for a terminal when colorize is set.
    """
    text = json.dumps(summary, indent=4)
    if not colorize:
        return text

    try:
        pygments_style = get_style_by_name(color_scheme)
    except ClassNotFound:
        logger.warning("Unknown color scheme '%s'. Falling back to 'monokai'.", color_scheme)
        pygments_style = get_style_by_name("monokai")

    formatter = pygments.formatters.TerminalFormatter(style=pygments_style)
    return pygments.highlight(text, JsonLexer(), formatter).rstrip("\n")
