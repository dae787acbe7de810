"""Run every config in configs/ through the CLI; outputs land in results/<config-name>/."""
import json
import sys
from pathlib import Path

from qdla.cli import main

ROOT = Path(__file__).resolve().parent.parent


def run_all(out_root: Path, only=None) -> int:
    worst = 0
    for cfg in sorted((ROOT / "configs").glob("*.json")):
        if only and cfg.stem not in only:
            continue
        experiment = json.loads(cfg.read_text())["experiment"]
        code = main([experiment, "--config", str(cfg), "--out", str(out_root / cfg.stem)])
        print(f"{cfg.stem:24s} exit {code}")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(run_all(ROOT / "results", set(sys.argv[1:]) or None))
