# -*- coding: utf-8 -*-
"""
Command line interface: ``cmolink simulate | train | analyze | count``.

Exit codes are 0 on success, 1 for configuration errors and 2 for
numerical failures (see :attr:`cmolink.errors.CmoError.exit_code`).
"""

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from . import __version__
from .agent import AgentConfig, AgentModel, generate_labels, train_agent
from .capacity import ConstellationSet, analyze, shaping_gain_ratio, write_analysis
from .channel import Numerology
from .errors import CmoError, ConfigError
from .harness import (PRESETS, SweepConfig, ideal_link_adaptation, run_sweep, scenario_preset,
                      write_link_adaptation, write_results)
from .link import LinkConfig
from .models import LinkModels, ModelConfig, missing_files
from .modulation import CrossLayerModulator, count_params_and_flops
from .training import TrainConfig, train_phase
from .utils import parse_grid

__all__ = ["main", "build_parser"]

log = logging.getLogger("cmolink")

#: Payloads (bits/RE) of the parameter and FLOP table.
TABLE_PAYLOADS = (2, 8, 16, 24, 32)


def _grid(text):
    try:
        return parse_grid(text)
    except ConfigError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _ul_grid(text):
    if text.strip().lower() in ("ideal", "none"):
        return [None]
    return _grid(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmolink", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="Log progress (twice for debug output)")
    parser.add_argument("-q", "--quiet", action="store_true", help="Only log warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="BLER and goodput sweep of a scenario")
    p.add_argument("--config", help="Sweep configuration (JSON); command line options override it")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--payload", type=int, help="Bits per resource element")
    p.add_argument("--scale", choices=("desk", "full"))
    p.add_argument("--snr", type=_grid, help="Downlink SNR grid, e.g. -4:2:16")
    p.add_argument("--ul-snr", type=_ul_grid, help="Uplink SNR grid or 'ideal'")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--model-path", help="Directory of trained link models")
    p.add_argument("--detector", choices=("lmmse", "zf", "kbest"))
    p.add_argument("--link-adaptation", action="store_true",
                   help="Report per-candidate, ideal and agent-driven goodput instead")
    p.add_argument("--agent", help="Control agent artifact for --link-adaptation")
    p.add_argument("--out", default="results.csv", help="Result CSV (a .json manifest goes next to it)")

    p = sub.add_parser("train", help="Run one training phase")
    p.add_argument("--phase", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--config", help="Training configuration (TrainConfig or AgentConfig JSON)")
    p.add_argument("--model-config", help="Model sizes (ModelConfig JSON) for a new bundle")
    p.add_argument("--desk", action="store_true", help="Use the desk-scale model sizes for a new bundle")
    p.add_argument("--models", required=True, help="Model bundle directory (created in phase 1)")
    p.add_argument("--lam", type=float, help="Override the loss weight of phase 1 or 2")
    p.add_argument("--report", help="Directory for the loss trace and summary")
    p.add_argument("--candidates", help="Phase 3: JSON list of candidate link configurations")
    p.add_argument("--preset", choices=PRESETS, help="Phase 3: build candidates from a preset")
    p.add_argument("--payload", type=int, default=8)
    p.add_argument("--scale", choices=("desk", "full"), default="desk")
    p.add_argument("--realizations", type=int, default=500, help="Phase 3: labelled channel realizations")
    p.add_argument("--snr-range", type=_grid, default=[-4.0, 16.0], help="Phase 3: SNR range lo,hi")
    p.add_argument("--dataset", help="Phase 3: write the labelled dataset to this CSV file")
    p.add_argument("--agent", default="agent", help="Phase 3: agent artifact (stem inside --models)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("analyze", help="BICM capacity and distance analysis of a constellation")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--constellation", help="Constellation CSV file")
    src.add_argument("--qam", type=int, help="Gray QAM bits per layer")
    src.add_argument("--models", help="Model bundle; analyzes the learned constellation")
    src.add_argument("--shaping", type=_grid, help="Only print shaping gain ratios for these N")
    p.add_argument("--layers", type=int, default=1, help="Layers for --qam")
    p.add_argument("--sigma2", type=_grid, default=[1.0, 0.316, 0.1], help="Noise variance grid")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--shards", type=int, default=1)
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="Write rows to this CSV file")
    p.add_argument("--dump", help="Also write the analyzed constellation to this CSV file")

    p = sub.add_parser("count", help="Trainable parameters and FLOPs")
    p.add_argument("--model", help="Model bundle directory (or agent artifact)")
    p.add_argument("--n-layer", type=int, default=4, help="Layers of the reference table")
    p.add_argument("--codec", action="store_true", help="Include the full-size CSI codec")
    return parser


##
### Commands
##


def _print_table(header, rows):
    widths = [max(len(str(x)) for x in column) for column in zip(header, *rows)]
    for row in [header] + list(rows):
        print("  ".join(str(x).rjust(w) for x, w in zip(row, widths)))


def cmd_simulate(args) -> int:
    config = SweepConfig.load(args.config) if args.config else SweepConfig()
    overrides = {"preset": args.preset, "payload": args.payload, "scale": args.scale,
                 "dl_snr_db": tuple(args.snr) if args.snr else None,
                 "ul_snr_db": tuple(args.ul_snr) if args.ul_snr else None,
                 "trials": args.trials, "seed": args.seed, "workers": args.workers,
                 "model_path": args.model_path, "detector": args.detector, "agent_path": args.agent}
    config = config.replace(**{k: v for k, v in overrides.items() if v is not None})
    links = config.links()

    if args.link_adaptation:
        agent = AgentModel.load(config.agent_path) if config.agent_path else None
        if agent is not None:
            links = agent.candidates
        rows = []
        for ul in config.ul_snr_db:
            rows += ideal_link_adaptation(links, config.dl_snr_db, config.trials, config.seed, ul,
                                          agent, config.workers)
        paths = write_link_adaptation(rows, args.out, links, config.seed, {"sweep": config.to_dict()})
    else:
        points = run_sweep(links, config.dl_snr_db, config.trials, config.seed, config.ul_snr_db,
                           config.workers)
        paths = write_results(points, args.out, links, {"sweep": config.to_dict()})
    log.info("Wrote %s and %s", *paths)
    return 0


def _train_link(args) -> int:
    config = TrainConfig.load(args.config) if args.config else TrainConfig()
    if not missing_files(args.models):
        models = LinkModels.load(args.models)
        log.info("Resuming %s (completed phase %d, step %d)", args.models,
                 models.progress["phase"], models.progress["step"])
    elif args.phase == 1:
        if args.model_config:
            model_config = ModelConfig.load(args.model_config)
        else:
            model_config = ModelConfig.desk() if args.desk else ModelConfig()
        models = LinkModels(model_config, config.numerology)
    else:
        raise ConfigError(f"Phase {args.phase} needs a trained bundle in {args.models}")
    report = train_phase(models, config, args.phase, lam=args.lam, checkpoint_dir=args.models)
    report.write(args.report or args.models)
    print(json.dumps(report.summary(), indent=2))
    return 0


def _train_agent(args) -> int:
    config = AgentConfig.load(args.config) if args.config else AgentConfig()
    if args.candidates:
        try:
            with open(args.candidates, "r", encoding="utf8") as fp:
                candidates = [LinkConfig.from_dict(c) for c in json.load(fp)]
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read candidates from {args.candidates}: {e}") from e
    elif args.preset:
        candidates = scenario_preset(args.preset, payload=args.payload, scale=args.scale,
                                     model_path=args.models if args.preset != "baseline5g" else None)
    else:
        raise ConfigError("Phase 3 needs --candidates or --preset")
    if len(args.snr_range) != 2:
        raise ConfigError("--snr-range must be lo,hi")
    data = generate_labels(candidates, range(args.realizations), seed=args.seed,
                           snr_db=tuple(args.snr_range), workers=args.workers)
    if args.dataset:
        data.to_csv(args.dataset)
    model = AgentModel(data.n_layer, candidates, hidden_factor=config.hidden_factor, seed=config.seed)
    train_agent(model, data, config)
    os.makedirs(args.models, exist_ok=True)
    path = model.save(os.path.join(args.models, args.agent))
    print(json.dumps({"agent": path, "train_accuracy": model.train_accuracy,
                      "val_accuracy": model.val_accuracy}, indent=2))
    return 0


def cmd_train(args) -> int:
    return _train_agent(args) if args.phase == 3 else _train_link(args)


def cmd_analyze(args) -> int:
    if args.shaping:
        _print_table(["N", "shaping_gain"], [[int(n), f"{shaping_gain_ratio(int(n)):.6f}"]
                                             for n in args.shaping])
        return 0
    if args.constellation:
        cs = ConstellationSet.from_csv(args.constellation)
    elif args.qam:
        cs = ConstellationSet.from_qam(args.qam, args.layers)
    else:
        models = LinkModels.load(args.models)
        cs = ConstellationSet.from_modulator(models.modulator, name=os.path.basename(args.models))
    if args.dump:
        cs.to_csv(args.dump)
    rows = analyze(cs, args.sigma2, args.samples, args.seed, args.shards, args.workers)
    if args.out:
        write_analysis(rows, args.out)
    _print_table(["sigma2", "capacity", "stderr", "d_min", "sphere_d_min"],
                 [[r["sigma2"], f"{r['capacity']:.4f}", f"{r['stderr']:.4f}", f"{r['d_min']:.4f}",
                   f"{r['sphere_d_min']:.4f}"] for r in rows])
    return 0


def cmd_count(args) -> int:
    rows = []
    if args.model and os.path.isdir(args.model):
        for name, (params, flops) in LinkModels.load(args.model).count().items():
            rows.append([name, "-", params, flops])
    elif args.model:
        graph = AgentModel.load(args.model).graph
        rows.append([graph.name, "-", graph.count_parameters(), graph.count_flops()])
    else:
        for payload in TABLE_PAYLOADS:
            modulator = CrossLayerModulator(payload, args.n_layer)
            for graph in (modulator.mod_graph, modulator.demod_graph):
                rows.append([graph.name, payload, *count_params_and_flops(graph)])
        if args.codec:
            models = LinkModels(ModelConfig(n_layer=args.n_layer), Numerology())
            for graph in (models.codec.encoder, models.codec.decoder):
                rows.append([graph.name, models.config.csi_bits, *count_params_and_flops(graph)])
    _print_table(["graph", "payload", "params", "flops"], rows)
    return 0


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "analyze": cmd_analyze, "count": cmd_count}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose > 1 else
                                                logging.INFO if args.verbose else logging.WARNING)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CmoError as e:
        log.error("%s", e)
        return e.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
