import datetime
import hashlib
import json
from pathlib import Path
import platform
import subprocess
from typing import Any, Dict, Iterable, Mapping, Optional

import numpy as np
import pandas as pd
import scipy
import tqdm
import yaml

HASH_CHUNK_BYTES = 64 * 1024


def manifest_path(output: Path) -> Path:
    """``<output-stem>.manifest.json`` next to ``output``."""
    output = Path(output)
    return output.with_name(f"{output.stem}.manifest.json")


def write_manifest(output: Path, command: str, args: Mapping[str, Any], config_sha256: str,
                   seed: int, inputs: Iterable[Path] = ()) -> Path:
    """Record what produced ``output`` so the run can be repeated."""
    inputs_info: Dict[str, Any] = {}
    for p in sorted({Path(i) for i in inputs if i is not None}, key=lambda p: str(p)):
        inputs_info[str(p)] = {"sha256": _sha256_file(p)} if p.is_file() \
            else {"sha256": None, "missing": not p.exists()}

    manifest: Dict[str, Any] = {
        "generated_at_utc": _utc_now_iso(),
        "command": command,
        "args": {k: _jsonable(v) for k, v in sorted(args.items())},
        "config_sha256": config_sha256,
        "seed": int(seed),
        "hash_algo": "sha256",
        "inputs": inputs_info,
        "tool_versions": _collect_tool_versions(),
        "git_revision": get_git_hash(),
    }
    path = manifest_path(output)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    return path


def get_git_hash() -> Optional[str]:
    """Commit hash of the working tree, with a '-dirty' suffix for uncommitted changes.

    Returns None outside a git repository or when git is not installed.
    """
    try:
        git_hash = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True,
                                  check=True).stdout.strip()
        status = subprocess.run(["git", "status", "--porcelain"], capture_output=True, text=True,
                                check=True)
        if status.stdout:
            git_hash += "-dirty"
        return git_hash
    except (subprocess.CalledProcessError, FileNotFoundError):
        return None


def _utc_now_iso() -> str:
    now = datetime.datetime.now(datetime.timezone.utc)
    return now.replace(microsecond=0).isoformat().replace("+00:00", "Z")


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as f:
        while block := f.read(HASH_CHUNK_BYTES):
            digest.update(block)
    return digest.hexdigest()


def _collect_tool_versions() -> Dict[str, str]:
    """Versions that matter for reproducing numeric outputs."""
    return {
        "python": platform.python_version(),
        "platform": platform.platform(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "yaml": yaml.__version__,
        "tqdm": tqdm.__version__,
    }


def _jsonable(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)
