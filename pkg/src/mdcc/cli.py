"""Command-line entry point: ``mdcc synth | run | eval``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .cascade import load_cascade
from .config import PRESETS, load_config
from .data import load_dataset, synth_generate
from .errors import ConfigError, MDCCError
from .evaluation import StreamSchedule, evaluate_cascade, run_protocol, write_reports

log = logging.getLogger("mdcc")


def _int_list(text):
    return [int(t) for t in text.split(",") if t.strip()]


def build_parser():
    parser = argparse.ArgumentParser(prog="mdcc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a Gaussian open-world dataset (CSV)")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--sep", type=float, required=True, help="minimum distance between class centres")
    p.add_argument("--train", type=int, default=200, help="train instances per class")
    p.add_argument("--test", type=int, default=200, help="test instances per class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="synth.csv", help="output file (.csv or .jsonl)")

    p = sub.add_parser("run", help="run the staged open-world protocol")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--initial", type=_int_list, help="comma-separated initially known classes")
    p.add_argument("--arrival", type=_int_list, help="comma-separated arrival order")

    p = sub.add_parser("eval", help="score a saved cascade on a dataset's test split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="directory for eval.json (printed to stdout otherwise)")
    return parser


def cmd_synth(args):
    ds = synth_generate(args.classes, args.dim, args.sep, args.train, args.test, seed=args.seed)
    out = Path(args.out)
    if out.parent != Path("."):
        out.parent.mkdir(parents=True, exist_ok=True)
    ds.save(out)
    print(f"wrote {len(ds)} instances ({len(ds.classes())} classes) to {out}")


def cmd_run(args):
    overrides = {"seed": args.seed} if args.seed is not None else None
    config = load_config(args.config, args.preset, overrides=overrides)
    dataset = load_dataset(args.data)
    if args.initial or args.arrival:
        classes = dataset.classes("train")
        initial = args.initial or classes[:2]
        arrival = args.arrival or [c for c in classes if c not in initial]
        schedule = StreamSchedule(initial, arrival, config.seed)
    else:
        schedule = StreamSchedule.default(dataset, seed=config.seed)

    # model.json is the cascade as scored in the last report, so that
    # `mdcc eval` on it reproduces that report.
    state = {}

    def observer(event, cascade, payload):
        state["cascade"] = cascade
        if event == "report":
            state["snapshot"] = cascade.dumps()
            log.info("stage %d: EN-Accuracy %.4f F-score %.4f",
                     payload.stage, payload.en_accuracy, payload.f_score)

    reports = run_protocol(dataset, schedule, config, observer=observer)
    out = Path(args.out)
    schedule_echo = {
        "initial_known": schedule.initial_known,
        "arrival_order": schedule.arrival_order,
        "interleave_seed": schedule.interleave_seed,
    }
    write_reports(reports, out, config, extra={"schedule": schedule_echo, "data": str(args.data)})
    if "snapshot" in state:
        (out / "model.json").write_text(state["snapshot"], encoding="utf-8")
    (out / "final_model.json").write_text(state["cascade"].dumps(), encoding="utf-8")
    print(f"{len(reports)} stage reports written to {out}")


def cmd_eval(args):
    cascade = load_cascade(args.model)
    dataset = load_dataset(args.data)
    test = dataset.test
    if not test:
        raise MDCCError(f"{args.data} has no test instances")
    report = evaluate_cascade(cascade, test)
    payload = json.dumps({"config": cascade.config.to_dict(), "report": report.to_dict()}, indent=2)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(payload + "\n", encoding="utf-8")
    print(payload)


COMMANDS = {"synth": cmd_synth, "run": cmd_run, "eval": cmd_eval}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"mdcc: config error: {exc}", file=sys.stderr)
        return 2
    except (MDCCError, ValueError, OSError, RuntimeError) as exc:
        print(f"mdcc: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
