"""Argument parsing and result output shared by the experiment scripts."""

import argparse
import json
import sys
from pathlib import Path

from blpinn import experiments as ex

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def parser(description: str, *configs: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    for name in configs:
        flag = "--" + name.split("=")[0]
        p.add_argument(flag, default=str(CONFIGS / name.split("=")[1]), help="TOML configuration")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--out", help="write the raw results as JSON here")
    return p


def load(path) -> ex.RunConfig:
    return ex.load_config(path)


def dump(results, out) -> None:
    text = json.dumps(results, indent=2, sort_keys=True, default=float)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")
