"""Command-line entry point: render figures from simulation CSV directories."""

import argparse
import json
import sys
from pathlib import Path

from .render import RenderError, fig1_spec, fig2_spec, figure_spec_from_dict, render_figure


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qsd3-render",
        description="Render relaxation/purity figures from qsd3 CSV output",
    )
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--fig1", metavar="DIR",
                       help="directory holding the fig1 preset CSVs; writes DIR/fig1.png")
    group.add_argument("--fig2", metavar="DIR",
                       help="directory holding the fig2 preset CSVs; writes DIR/fig2.png")
    group.add_argument("--spec", metavar="JSON",
                       help="custom figure spec (kind/out/panels), paths relative to the file")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        if args.fig1:
            spec = fig1_spec(args.fig1)
        elif args.fig2:
            spec = fig2_spec(args.fig2)
        else:
            spec_path = Path(args.spec)
            try:
                data = json.loads(spec_path.read_text())
            except OSError as exc:
                raise RenderError(f"cannot read spec file {spec_path}: {exc}") from None
            except json.JSONDecodeError as exc:
                raise RenderError(f"spec file {spec_path} is not valid JSON: {exc}") from None
            spec = figure_spec_from_dict(data, base_dir=spec_path.parent)
        out = render_figure(spec)
    except RenderError as exc:
        print(f"render error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
