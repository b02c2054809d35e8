"""Render a scenario run directory to a figure panel.

Usage::

    python3 -m plots.render <scenario_dir> --out <image_path>

The scenario directory must contain ``data.csv`` and ``meta.json`` as
written by the simulation package.  Exit codes: 0 on success (including
an empty dataset, which yields empty labeled axes), 1 on a schema or
usage error.
"""

import argparse
import sys

if __package__:
    from .figures import SchemaError, render_scenario_dir
else:
    from figures import SchemaError, render_scenario_dir


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Render one scenario dataset to an image.")
    parser.add_argument("scenario_dir",
                        help="directory containing data.csv and meta.json")
    parser.add_argument("--out", required=True, help="output image path")
    args = parser.parse_args(argv)
    try:
        render_scenario_dir(args.scenario_dir, args.out)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
