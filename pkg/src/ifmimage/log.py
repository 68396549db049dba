from typing import Any, Dict, List, Optional
from datetime import datetime
import os
import json
import logging

logger = logging.getLogger(__name__)

HISTORY_FILE = "run_history.jsonl"


def history_dir() -> str:
    """
    Directory holding the run history: $IFMIMAGE_HOME, or ~/.ifmimage when unset.
    """
    return os.path.expanduser(os.environ.get("IFMIMAGE_HOME", "~/.ifmimage"))


def log_run(subcommand: str, out_dir: str, seed: int, results: Dict[str, Any]) -> None:
    """
    Appends one run to the history file in JSON lines format.

    Parameters:
    - subcommand (str): The command-line subcommand that was executed.
    - out_dir (str): Directory the artifacts were written to.
    - seed (int): Run seed.
    - results (Dict[str, Any]): Headline results from the run summary.
    """
    log_entry = {
        "timestamp": datetime.now().isoformat(),
        "current_dir": os.getcwd(),
        "subcommand": subcommand,
        "out_dir": os.path.abspath(out_dir),
        "seed": seed,
        "results": results,
    }

    try:
        os.makedirs(history_dir(), exist_ok=True)
        with open(os.path.join(history_dir(), HISTORY_FILE), "a") as f:
            f.write(json.dumps(log_entry) + "\n")
    except Exception as e:
        # history is a convenience, never fail a run over it
        logger.warning("Failed to log run: %s", e)


def read_run_history(n: Optional[int] = None) -> List[Dict[str, Any]]:
    """
    Returns the most recent runs first; malformed lines are skipped.
    """
    log_file = os.path.join(history_dir(), HISTORY_FILE)
    if not os.path.exists(log_file):
        return []

    with open(log_file, "r") as f:
        lines = f.readlines()

    entries = []
    for line in reversed(lines):
        try:
            entries.append(json.loads(line))
        except json.JSONDecodeError:
            continue
    return entries if n is None else entries[:n]


def list_run_history(n: int) -> None:
    """
    Prints the last n runs, most recent first.
    """
    entries = read_run_history(n)
    if not entries:
        print("No run history found.")
        return

    for i, entry in enumerate(entries, 1):
        timestamp = datetime.fromisoformat(entry["timestamp"]).strftime("%Y-%m-%d %H:%M:%S")
        print(f"{i}. [{timestamp}] {entry['subcommand']} seed={entry['seed']} -> {entry['out_dir']}")
