"""The vwsd-export command."""

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from .errors import ExportError
from .jobs import (
    DEFAULT_BATCH,
    ExportJob,
    export_gloss_embeddings,
    export_image_embeddings,
    export_text_embeddings,
)
from .manifest import read_manifest
from .wordnet import extract_inventory

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="vwsd-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--model", required=True, help="encoder id (or hash:<dim>)")
    model.add_argument("--out", required=True, type=Path, help="output store path")
    model.add_argument("--batch", type=int, default=DEFAULT_BATCH)

    text = sub.add_parser("export-text", parents=[model],
                          help="embed texts from an id<TAB>text manifest")
    text.add_argument("--manifest", required=True, type=Path)

    images = sub.add_parser("export-images", parents=[model],
                            help="embed images from an id<TAB>path manifest")
    images.add_argument("--manifest", required=True, type=Path)
    images.add_argument("--skip-bad", action="store_true",
                        help="drop unreadable images into a skip manifest")

    gloss = sub.add_parser("export-gloss", parents=[model],
                           help="embed every sense gloss in an inventory")
    gloss.add_argument("--inventory", required=True, type=Path)

    wn = sub.add_parser("extract-inventory",
                        help="build an inventory from a local wordnet")
    wn.add_argument("--out", required=True, type=Path)
    wn.add_argument("--pos", default="n", help="part of speech tag (default n)")
    return parser


def _job(args) -> ExportJob:
    return ExportJob(
        model=args.model,
        manifest=read_manifest(args.manifest),
        out=args.out,
        batch=args.batch,
    )


def _cmd_export_text(args) -> int:
    n = export_text_embeddings(_job(args))
    print(f"wrote {n} text vectors to {args.out}")
    return EXIT_OK


def _cmd_export_images(args) -> int:
    written, skipped = export_image_embeddings(_job(args), skip_bad=args.skip_bad)
    print(f"wrote {written} image vectors to {args.out}")
    if skipped:
        print(f"skipped {skipped} unreadable images (see {args.out}.skipped)")
    return EXIT_OK


def _cmd_export_gloss(args) -> int:
    n = export_gloss_embeddings(args.inventory, args.model, args.out, args.batch)
    print(f"wrote {n} gloss vectors to {args.out}")
    return EXIT_OK


def _cmd_extract_inventory(args) -> int:
    n = extract_inventory(args.out, pos=args.pos)
    print(f"wrote {n} inventory lines to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "export-text": _cmd_export_text,
    "export-images": _cmd_export_images,
    "export-gloss": _cmd_export_gloss,
    "extract-inventory": _cmd_extract_inventory,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except (ExportError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
