"""Command-line entry point: ``boa-lab run|validate|oracle``."""
from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from .errors import ConfigError
from .oracles import ORACLES, run_oracle
from .scaling_lab import EXIT_ERROR, EXIT_OK, load_config, run_experiment


def resolve_config(name: str) -> Path:
    """A path on disk, or the name of a bundled config (with or without .json)."""
    p = Path(name)
    if p.exists():
        return p
    stem = p.stem if p.suffix == ".json" else p.name
    bundled = resources.files("boalab") / "configs" / f"{stem}.json"
    if bundled.is_file():
        return Path(str(bundled))
    return p


def bundled_configs() -> list[str]:
    root = resources.files("boalab") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="boa-lab", description="Born-Oppenheimer scaling experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config", help="config path or bundled config name")
    run.add_argument("--output", help="override output.path")
    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config")
    orc = sub.add_parser("oracle", help="print a reference value with its provenance")
    orc.add_argument("name", choices=sorted(ORACLES) + ["list"])
    sub.add_parser("configs", help="list bundled configs")
    args = parser.parse_args(argv)

    if args.command == "configs":
        print("\n".join(bundled_configs()))
        return EXIT_OK
    if args.command == "oracle":
        if args.name == "list":
            print("\n".join(sorted(ORACLES)))
            return EXIT_OK
        print(json.dumps(run_oracle(args.name), indent=2, default=str))
        return EXIT_OK
    path = resolve_config(args.config)
    if not path.exists():
        print(f"config error: no such config '{args.config}'", file=sys.stderr)
        return EXIT_ERROR
    if args.command == "validate":
        try:
            cfg = load_config(path)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_ERROR
        print(f"ok: study={cfg.study} model={cfg.model.get('name')} nodes={list(cfg.grid.nodes)} eps={list(cfg.epsilons)}")
        return EXIT_OK
    if args.output:
        data = json.loads(path.read_text())
        data.setdefault("output", {})["path"] = str(Path(args.output).resolve())
        tmp = Path(args.output).resolve().with_suffix(".config.json")
        tmp.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_text(json.dumps(data, indent=2))
        path = tmp
    return run_experiment(path)


if __name__ == "__main__":
    sys.exit(main())
