"""fscl-export: write a frozen-teacher bundle from a pretrained checkpoint.

Exit codes: 0 success, 1 usage error, 2 dataset/checkpoint error, 3 runtime.
"""

import argparse
import sys

from .errors import CheckpointError, DatasetError, ExportError, UsageError
from .export import DEFAULT_PROMPT, export


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(
        prog="fscl-export",
        description="Export per-sample teacher features/scores to the BFTB "
                    "bundle format consumed by the fscl harness")
    parser.add_argument("--dataset", required=True,
                        help="directory laid out as <dataset>/<class name>/<image>")
    parser.add_argument("--classes", required=True,
                        help="text file with one class name per line (vocabulary order)")
    parser.add_argument("--checkpoint", required=True,
                        help="model id or local path of a CLIP-style checkpoint")
    parser.add_argument("--taps", default="auto",
                        help="comma-separated 1-based vision blocks to tap, "
                             "or 'auto' for three evenly spaced ones")
    parser.add_argument("--out", required=True, help="output bundle path")
    parser.add_argument("--prompt", default=DEFAULT_PROMPT,
                        help="prompt template with one {} placeholder")
    parser.add_argument("--deterministic", action="store_true",
                        help="fixed seeds and single-threaded inference for "
                             "byte-identical reruns")
    parser.add_argument("--skip-bad", action="store_true",
                        help="skip undecodable images with a warning instead "
                             "of aborting")
    parser.add_argument("--batch-size", type=int, default=16)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        manifest = export(args.dataset, args.classes, args.checkpoint,
                          args.taps, args.out, prompt_template=args.prompt,
                          deterministic=args.deterministic,
                          skip_bad=args.skip_bad, batch_size=args.batch_size)
        print(f"wrote {args.out}: {manifest.n_samples} records, "
              f"taps {manifest.taps}, vocab {len(manifest.class_names)}")
        return 0
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DatasetError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
