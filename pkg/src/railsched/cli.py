"""railsched command line: generate, solve, verify, score."""
from __future__ import annotations

import argparse
import io
import json
import logging
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

from .controller import ControllerAssertion, ModeConfig, run_episode
from .overlap import OverlapPolicy
from .plan_repair import DeadlockAssertion
from .rail_network import GenerationError, MapParseError, MapValidationError
from .scenario import atomic_write, generate_scenario, load_scenario
from .simulation import Action, ScenarioError, init_episode, step

EXIT_COMPLETE = 0
EXIT_INCOMPLETE = 1
EXIT_INTERNAL = 2
EXIT_INPUT = 3
EXIT_USAGE = 64

log = logging.getLogger("railsched")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _size(text: str):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None


def _range(text: str):
    try:
        a, b = text.split(":")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A:B, got {text!r}") from None


def _speed_mix(text: str):
    try:
        mix = {}
        for part in text.split(","):
            den, weight = part.split(":")
            mix[int(den)] = float(weight)
        return mix
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected DEN:WEIGHT,..., got {text!r}") from None


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="railsched", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", help="write a random scenario")
    gen.add_argument("--size", type=_size, required=True, metavar="WxH")
    gen.add_argument("--cities", type=int, required=True)
    gen.add_argument("--agents", type=int, required=True)
    gen.add_argument("--malf-p", type=float, default=0.0)
    gen.add_argument("--malf-dur", type=_range, default=(3, 20), metavar="A:B")
    gen.add_argument("--speed-mix", type=_speed_mix, default=None, metavar="DEN:W,...",
                     help="speed_den weights, e.g. 1:0.25,2:0.25,3:0.25,4:0.25 (default: all 1)")
    gen.add_argument("--episode-len", type=_positive)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out", type=Path, required=True)

    solve = sub.add_parser("solve", help="run one episode and write report.json and replay.jsonl")
    solve.add_argument("--scenario", type=Path, required=True)
    solve.add_argument("--policy", choices=[p.value for p in OverlapPolicy], default="no-nested")
    solve.add_argument("--seed", type=int, required=True)
    solve.add_argument("--out", type=Path, required=True)
    solve.add_argument("--episode-len", type=_positive, help="override the scenario's length")
    solve.add_argument("--exponent", type=float, default=1.0)
    solve.add_argument("--time-budget", type=float, help="seconds before full searches are skipped")
    solve.add_argument("--workers", type=_positive, default=1,
                       help="processes for the permutation workers")
    for mode in ("initial", "full", "restricted"):
        solve.add_argument(f"--{mode}-runs", type=_positive)
        solve.add_argument(f"--{mode}-threads", type=_positive)
        solve.add_argument(f"--{mode}-perms", type=_positive)
    solve.add_argument("--counter-threshold", type=_positive)

    ver = sub.add_parser("verify", help="re-simulate a replay log")
    ver.add_argument("--scenario", type=Path, required=True)
    ver.add_argument("--replay", type=Path, required=True)

    sc = sub.add_parser("score", help="summarise run reports")
    sc.add_argument("files", nargs="+", type=Path)
    return parser


def mode_config(args) -> ModeConfig:
    cfg = ModeConfig()
    changes = {}
    for mode in ("initial", "full", "restricted"):
        params = getattr(cfg, mode)
        over = {}
        for flag, fieldname in (("runs", "max_runs"), ("threads", "num_threads"),
                                ("perms", "num_permutations")):
            value = getattr(args, f"{mode}_{flag}")
            if value is not None:
                over[fieldname] = value
        if over:
            changes[mode] = replace(params, **over)
    if args.counter_threshold is not None:
        changes["counter_threshold"] = args.counter_threshold
    return replace(cfg, **changes)


def cmd_generate(args) -> int:
    width, height = args.size
    scenario = generate_scenario(width, height, args.cities, args.agents, args.seed,
                                 args.malf_p, args.malf_dur, args.speed_mix, args.episode_len)
    args.out.mkdir(parents=True, exist_ok=True)
    atomic_write(args.out / "map.txt", scenario.net.to_text())
    data = scenario.to_json(map_ref="map.txt")
    atomic_write(args.out / "scenario.json", json.dumps(data, indent=2) + "\n")
    print(f"wrote {args.out / 'scenario.json'}: {scenario.net.num_cells} rail cells, "
          f"{len(scenario.agents)} agents, {len(scenario.malfunctions)} malfunctions, "
          f"episode_len {scenario.episode_len}")
    return EXIT_COMPLETE


def cmd_solve(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.episode_len is not None:
        scenario.episode_len = args.episode_len
    init_episode(scenario.net, scenario.agents, scenario.malfunctions, scenario.episode_len)
    config = mode_config(args)
    policy = OverlapPolicy.parse(args.policy)
    args.out.mkdir(parents=True, exist_ok=True)
    replay = io.StringIO()
    executor = ProcessPoolExecutor(args.workers) if args.workers > 1 else None
    try:
        report = run_episode(scenario, config, policy, args.seed, args.exponent,
                             args.time_budget, replay, executor)
    finally:
        if executor is not None:
            executor.shutdown()
    atomic_write(args.out / "replay.jsonl", replay.getvalue())
    atomic_write(args.out / "report.json", report.dumps())
    n = len(report.arrivals)
    print(f"completion {report.completion:.3f} ({round(report.completion * n)}/{n}), "
          f"Y {report.score['cost']}, repairs {len(report.repairs)}, "
          f"deadlocked {report.counters['deadlocked']}, {report.wall_time:.1f}s")
    return EXIT_COMPLETE if report.completion >= 1.0 else EXIT_INCOMPLETE


def verify_replay(scenario, lines: Sequence[str]) -> List[str]:
    """Re-simulate ``lines`` and list every disagreement (empty means OK)."""
    episode, state = init_episode(scenario.net, scenario.agents, scenario.malfunctions,
                                  scenario.episode_len)
    records = []
    for no, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            raise ScenarioError(f"replay line {no} is not JSON") from None
    if not records:
        return [] if not scenario.agents else ["replay is empty"]
    first = records[0]
    if first.get("tick") != 0 or first.get("status") != state.describe():
        return ["tick 0: initial status differs"]
    for rec in records[1:]:
        expected_tick = state.tick + 1
        if rec.get("tick") != expected_tick:
            return [f"tick {expected_tick}: log jumps to tick {rec.get('tick')}"]
        try:
            actions = [Action.decode(a) for a in rec["actions"]]
        except (KeyError, ValueError, TypeError) as exc:
            return [f"tick {expected_tick}: unreadable actions ({exc})"]
        result = step(episode, state, actions)
        state = result.state
        if result.rejected_actions:
            return [f"tick {expected_tick}: rejected actions {result.rejected_actions}"]
        if rec.get("status") != state.describe():
            diffs = [f"agent {i}: logged {a!r}, simulated {b!r}"
                     for i, (a, b) in enumerate(zip(rec.get("status") or [], state.describe()))
                     if a != b]
            return [f"tick {expected_tick}: " + "; ".join(diffs or ["status list differs"])]
    return []


def cmd_verify(args) -> int:
    scenario = load_scenario(args.scenario)
    try:
        lines = args.replay.read_text().splitlines()
    except OSError as exc:
        raise ScenarioError(f"cannot read {args.replay}: {exc.strerror}") from None
    problems = verify_replay(scenario, lines)
    if problems:
        for p in problems:
            print(p)
        return EXIT_INCOMPLETE
    print("OK")
    return EXIT_COMPLETE


def cmd_score(args) -> int:
    rows = []
    for path in args.files:
        try:
            data = json.loads(path.read_text())
            rows.append((str(path), float(data["completion"]), data["score"]["cost"],
                         len(data.get("repairs", [])), int(data["counters"].get("deadlocked", 0))))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ScenarioError(f"{path}: not a run report ({exc})") from None
    width = max(len(r[0]) for r in rows)
    print(f"{'report':<{width}}  completion         Y  repairs  deadlocked")
    for name, comp, cost, reps, dead in rows:
        print(f"{name:<{width}}  {comp:10.4f}  {cost:8}  {reps:7d}  {dead:10d}")
    print(f"{'mean':<{width}}  {statistics.fmean(r[1] for r in rows):10.4f}  "
          f"{statistics.fmean(r[2] for r in rows):8.1f}  "
          f"{sum(r[3] for r in rows):7d}  {sum(r[4] for r in rows):10d}")
    return EXIT_COMPLETE


COMMANDS = {"generate": cmd_generate, "solve": cmd_solve, "verify": cmd_verify, "score": cmd_score}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ControllerAssertion, DeadlockAssertion) as exc:
        print(f"internal assertion: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except MapParseError as exc:
        print(f"map error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except MapValidationError as exc:
        print(f"invalid map: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ScenarioError, GenerationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
