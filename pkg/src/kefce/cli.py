"""Command line: ``kefce validate|gaps|learn|gen``."""

from __future__ import annotations

import argparse
import json
import sys

from .bench import (
    ExperimentConfig,
    gen_containment_game,
    gen_kuhn_poker,
    gen_nfce_example,
    gen_random_game,
    run_experiment,
)
from .errors import KefceError
from .evaluate import kefce_gap, kefce_gap_bruteforce
from .game import load_game, save_game
from .policy import CorrelatedPolicy


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _write_json(data, path) -> None:
    if path is None or path == "-":
        json.dump(data, sys.stdout, indent=1)
        sys.stdout.write("\n")
    else:
        with open(path, "w") as fh:
            json.dump(data, fh, indent=1)


def cmd_validate(args) -> int:
    game = load_game(args.game)
    print(json.dumps({"fingerprint": game.fingerprint, **game.digest()}, sort_keys=True))
    return 0


def cmd_gaps(args) -> int:
    game = load_game(args.game)
    with open(args.policy) as fh:
        mix = CorrelatedPolicy.from_json(game, json.load(fh)).validate(game)
    solver = kefce_gap_bruteforce if args.bruteforce else kefce_gap
    for k in _int_list(args.K):
        report = solver(game, mix, k)
        print(json.dumps({"K": k, **report.to_json()}, sort_keys=True))
    return 0


def cmd_learn(args) -> int:
    cfg = ExperimentConfig(
        game=args.game, ks=_int_list(args.K), rounds=args.T, mode=args.mode,
        seeds=_int_list(args.seed), out=args.out, eta=args.eta, failure_prob=args.p,
        max_components=args.max_components, record_wall_time=not args.no_wall_time,
    )
    path = run_experiment(cfg)
    print(path)
    return 0


def cmd_gen(args) -> int:
    mix = None
    if args.kind == "containment":
        game, mix = gen_containment_game(args.K, mirror=args.mirror)
    elif args.kind == "nfce":
        game, mix = gen_nfce_example()
    elif args.kind == "kuhn":
        game = gen_kuhn_poker()
    else:
        game = gen_random_game(args.seed, players=args.players, horizon=args.horizon,
                               actions=args.actions, states_per_layer=args.states,
                               branching=args.branching, signals=args.signals)
    if args.out in (None, "-"):
        _write_json(game.to_json(), None)
    else:
        save_game(game, args.out)
    if args.policy_out:
        if mix is None:
            raise KefceError(f"the {args.kind} generator has no correlated policy")
        _write_json(mix.to_json(game), args.policy_out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kefce", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a game file and print its summary")
    p.add_argument("game")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gaps", help="equilibrium gaps of a correlated policy")
    p.add_argument("game")
    p.add_argument("--policy", required=True)
    p.add_argument("--K", default="1", help="comma-separated budgets")
    p.add_argument("--bruteforce", action="store_true", help="enumerate every modification")
    p.set_defaults(func=cmd_gaps)

    p = sub.add_parser("learn", help="run the learners and write gaps at checkpoints to CSV")
    p.add_argument("--game", required=True,
                   help="game file, or a generator such as random:seed=1,horizon=3 or kuhn")
    p.add_argument("--mode", choices=("full", "bandit"), default="full")
    p.add_argument("--K", default="1")
    p.add_argument("--T", type=int, default=1024)
    p.add_argument("--seed", default="0", help="comma-separated seeds")
    p.add_argument("--out", default="results.csv")
    p.add_argument("--eta", type=float, default=None, help="override the default step size")
    p.add_argument("--p", type=float, default=0.05, help="failure probability (bandit)")
    p.add_argument("--max-components", type=int, default=64)
    p.add_argument("--no-wall-time", action="store_true", help="write 0 in the wall_ms column")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("gen", help="write an example game")
    p.add_argument("kind", choices=("containment", "nfce", "kuhn", "random"))
    p.add_argument("--out", default=None)
    p.add_argument("--policy-out", default=None)
    p.add_argument("--K", type=int, default=1)
    p.add_argument("--mirror", choices=("auto", "full", "layer"), default="auto")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--players", type=int, default=2)
    p.add_argument("--horizon", type=int, default=2)
    p.add_argument("--actions", type=int, default=2)
    p.add_argument("--states", type=int, default=1)
    p.add_argument("--branching", type=int, default=1)
    p.add_argument("--signals", type=int, default=2)
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (KefceError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
