"""Command-line entry points: tarc-export and tarc-import.

Exit codes: 0 success, 1 usage error, 2 data error (unloadable
checkpoint, malformed archive, filter problems, I/O failures).
"""

from __future__ import annotations

import argparse
import sys

from .bridge import export_checkpoint, import_checkpoint
from .errors import BridgeError
from .filters import KeyFilter, default_filter, parse_rename_rule


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _run(fn) -> int:
    try:
        return fn()
    except SystemExit as exc:
        return int(exc.code or 0)
    except BridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main_export(argv=None) -> int:
    parser = _Parser(
        prog="tarc-export",
        description="Convert a checkpoint into a float32 tensor archive.",
    )
    parser.add_argument("ckpt", help="checkpoint file (flat key->tensor mapping)")
    parser.add_argument("out", help="archive file to write")
    parser.add_argument("--include", action="append", default=[], metavar="PREFIX",
                        help="keep only keys with this prefix (repeatable)")
    parser.add_argument("--exclude", action="append", default=[], metavar="PREFIX",
                        help="drop keys with this prefix (repeatable; wins over --include)")
    parser.add_argument("--rename", action="append", default=[], metavar="OLD=NEW",
                        help="rewrite a key prefix after filtering (repeatable)")

    def run() -> int:
        args = parser.parse_args(argv)
        if args.include or args.exclude or args.rename:
            key_filter = KeyFilter(
                include=tuple(args.include),
                exclude=tuple(args.exclude),
                rename=tuple(parse_rename_rule(spec) for spec in args.rename),
            )
        else:
            key_filter = default_filter()  # drops optimizer/scheduler/EMA state
        count = export_checkpoint(args.ckpt, args.out, key_filter)
        print(f"wrote {count} entries to {args.out}")
        return 0

    return _run(run)


def main_import(argv=None) -> int:
    parser = _Parser(
        prog="tarc-import",
        description="Convert a tensor archive back into a loadable checkpoint.",
    )
    parser.add_argument("archive", help="archive file to read")
    parser.add_argument("out", help="checkpoint file to write")

    def run() -> int:
        args = parser.parse_args(argv)
        count = import_checkpoint(args.archive, args.out)
        print(f"wrote {count} entries to {args.out}")
        return 0

    return _run(run)
