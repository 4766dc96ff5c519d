"""Thin CLI over the renderer: one spec file per process.

Exit codes: 0 rendered, 2 spec error, 1 data error (missing/malformed CSV,
absent series or columns).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .render import CsvDataError, SpecError, parse_figure_spec, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="plots",
                                     description="Render a figure from experiment CSVs")
    parser.add_argument("--spec", type=Path, required=True,
                        help="figure spec file (figure.key = value lines)")
    parser.add_argument("--out", type=Path, default=None,
                        help="output directory (overrides the spec's directory)")
    parser.add_argument("--data", type=Path, default=None,
                        help="directory holding the input CSVs (default: spec's directory)")
    args = parser.parse_args(argv)

    try:
        spec = parse_figure_spec(args.spec.read_text())
    except OSError as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return 2
    except SpecError as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return 2
    base = args.data if args.data is not None else args.spec.parent
    try:
        result = render(spec, base_dir=base, out_dir=args.out)
    except CsvDataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {result.path} ({len(result.series_names)} series)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
