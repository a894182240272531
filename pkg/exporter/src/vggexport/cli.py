"""Command line front end: ``gazeinfer-export export --source <id> --out <dir>``.

Exit codes follow the gazeinfer convention: 0 success, 1 usage error,
2 anything that went wrong while obtaining, converting or verifying the
checkpoint.  Source-unavailable failures (downloads, missing optional
packages) are reported as retriable on stderr.
"""

import argparse
import sys

from .export import ExportError, SourceUnavailableError, export_bundle


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad flags; this tool reserves 2 for data errors."""

    def error(self, message):
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        self.print_usage(sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="gazeinfer-export",
        description="Convert a pretrained VGG16 checkpoint to an NNWB weight bundle.",
    )
    sub = p.add_subparsers(dest="command", required=True, metavar="<command>")
    exp = sub.add_parser(
        "export", help="write vgg16.nnwb, labels.txt and manifest.json"
    )
    exp.add_argument(
        "--source",
        required=True,
        help="checkpoint id, e.g. torchvision/vgg16 or torchvision/vgg16:random",
    )
    exp.add_argument(
        "--out", required=True, help="output directory, created if missing"
    )
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        if exc.code is None:
            return 0
        return exc.code if isinstance(exc.code, int) else 1
    try:
        manifest = export_bundle(args.source, args.out)
    except SourceUnavailableError as exc:
        print(
            f"gazeinfer-export: source unavailable, retry may succeed: {exc}",
            file=sys.stderr,
        )
        return 2
    except ExportError as exc:
        print(f"gazeinfer-export: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"gazeinfer-export: {exc}", file=sys.stderr)
        return 2
    agrees = manifest.source_framework_top1 is not None
    print(
        f"wrote {manifest.bundle_file} (checksum {manifest.checksum:016x}), "
        f"{manifest.labels_file}, {manifest.manifest_file}\n"
        f"probe top-5: {list(manifest.top5)}"
        + (" (source framework agrees)" if agrees else "")
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
