"""das-export: dump detector checkpoints as a das run directory."""

from __future__ import annotations

import argparse
import sys

from das_exporter.config import ExportConfig, ExportError
from das_exporter.export import export_run


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="das-export",
        description="Run original and weight-perturbed inference over both "
                    "domains and write a das run directory.")
    parser.add_argument("--config", required=True,
                        help="export config JSON (see ExportConfig)")
    parser.add_argument("--out", required=True, help="output run directory")
    args = parser.parse_args(argv)
    try:
        manifest = export_run(ExportConfig.from_file(args.config), args.out)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    print(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
