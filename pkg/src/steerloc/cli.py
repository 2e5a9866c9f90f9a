"""Command-line entry point: ``steerloc {locate,simulate,evaluate,plot-data,grid}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import audio, evaluation, geometry, pipeline, simulate

log = logging.getLogger("steerloc")


def _load_config(path: str | None) -> pipeline.PipelineConfig:
    if path is None:
        return pipeline.PipelineConfig()
    p = Path(path)
    return pipeline.PipelineConfig.from_json(p.read_text(), base_dir=p.parent)


def _load_array(path: str | None) -> geometry.MicrophoneArray:
    """An array file, or the ``array`` of a pipeline config, or the default prism."""
    if path is None:
        return geometry.prism_array()
    text = Path(path).read_text()
    doc = json.loads(text)
    if "microphones" in doc:
        return geometry.load_array_config(text)
    return _load_config(path).array


def cmd_locate(args) -> int:
    cfg = _load_config(args.config)
    log.info("configuration: %s", json.dumps(cfg.describe(), sort_keys=True))
    rate, chunks = audio.wav_chunks(args.input, args.chunk, cfg.array.sample_rate, cfg.array.M)
    loc = pipeline.Localizer(cfg, debug_dir=args.debug_dir)
    out = open(args.output, "w") if args.output != "-" else sys.stdout
    n = 0
    try:
        for event in loc.run(chunks):
            out.write(event.to_json() + "\n")
            n += 1
    finally:
        if out is not sys.stdout:
            out.close()
    log.info("%d events from %d frames", n, loc.frames)
    return 0


def cmd_simulate(args) -> int:
    array = _load_array(args.config)
    scene = simulate.load_scene(Path(args.scene).read_text(), seed=args.seed)
    x, truth = simulate.synthesize(scene, array)
    audio.write_wav(args.out_wav, x, array.sample_rate, fmt=args.format)
    simulate.write_truth(args.out_truth, truth)
    log.info("wrote %d samples x %d channels, %d truth records", x.shape[1], x.shape[0], len(truth))
    return 0


def cmd_evaluate(args) -> int:
    events = pipeline.read_events(args.events)
    truth = simulate.read_truth(args.truth)
    window = args.window_s if args.window_s is not None else evaluation.DEFAULT_WINDOW_S
    metrics = evaluation.evaluate(events, truth, args.threshold_deg, window)
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def cmd_plot_data(args) -> int:
    events = pipeline.read_events(args.events)
    sys.stdout.write(evaluation.emit_plot_data(events, args.kind))
    return 0


def cmd_grid_dump(args) -> int:
    array = _load_array(args.config)
    grid = geometry.build_grid(args.level)
    table = geometry.build_tdoa_table(array, grid)
    if args.out is None:
        if args.format == "bin":
            sys.stdout.buffer.write(table.to_bytes())
        else:
            sys.stdout.write(table.to_csv(grid))
    else:
        geometry.write_grid_dump(Path(args.out), grid, table, args.format)
    log.info("level %d grid: %d points, %d triangles, max lag %d",
             grid.level, grid.N, len(grid.triangles), table.max_lag)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="steerloc", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("locate", help="localize sources in a multichannel WAV file")
    p.add_argument("--config", help="pipeline config (JSON); defaults to the built-in prism")
    p.add_argument("--input", required=True)
    p.add_argument("--output", default="-", help="event file (JSON lines), '-' for stdout")
    p.add_argument("--chunk", type=int, default=48000, help="samples read per chunk")
    p.add_argument("--debug-dir", help="write per-block correlation and energy CSVs here")
    p.set_defaults(func=cmd_locate)

    p = sub.add_parser("simulate", help="synthesize a free-field scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--config", help="array or pipeline config (JSON)")
    p.add_argument("--out-wav", required=True)
    p.add_argument("--out-truth", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=("float32", "int16"), default="float32")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="score events against ground truth")
    p.add_argument("--events", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--threshold-deg", type=float, default=10.0)
    p.add_argument("--window-s", type=float)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot-data", help="CSV for azimuth/elevation track plots")
    p.add_argument("--events", required=True)
    p.add_argument("--kind", choices=("azimuth", "elevation", "probability-map"), default="azimuth")
    p.set_defaults(func=cmd_plot_data)

    p = sub.add_parser("grid", help="direction grid utilities")
    gsub = p.add_subparsers(dest="grid_command", required=True)
    g = gsub.add_parser("dump", help="write the TDOA lookup table")
    g.add_argument("--level", type=int, default=4)
    g.add_argument("--config", help="array or pipeline config (JSON)")
    g.add_argument("--format", choices=("bin", "csv"), default="csv")
    g.add_argument("--out")
    g.set_defaults(func=cmd_grid_dump)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("STEERLOC_LOG", "INFO").upper(),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, pipeline.PipelineError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
