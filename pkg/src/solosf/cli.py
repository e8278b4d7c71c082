"""Command-line entry point.

Subcommands::

    solosf simulate   protocol mixtures -> WAVs, RIR tensors, metadata
    solosf extract    one feature map from a mixture WAV
    solosf select     solo-segment kernel from a solo WAV
    solosf evaluate   method comparison over a simulated batch
    solosf demo       single-scenario walkthrough with heatmaps

Options come from ``--config FILE`` (flat ``key = value``) and are then
overridden by flags.  Each run writes ``run.cfg`` into its output directory;
passing that file back through ``--config`` repeats the run.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from .dsp import lps, stft
from .evaluate import (
    METHODS,
    REPORT_COLUMNS,
    ProtocolSettings,
    band_label,
    method_features,
    mixture_seed,
    oracle_dominance_mask,
    run_protocol,
    score_feature,
    simulate_protocol_mixture,
)
from .features import (
    ConvKernel,
    DegenerateKernelWarning,
    SourceBearing,
    assemble_composite,
    compute_rir_sf,
    compute_solo_sf,
    sf3d_from_bearing,
    sf3d_from_rir,
)
from .io import RunConfig, export_heatmap, load_tensor, read_wav, save_tensor, write_wav
from .room import RirTimeDomain, rir_to_kernel
from .select import SelectionStrategy, SoloPart, kernel_energy_report, select_kernel

log = logging.getLogger("solosf")


class UsageError(ValueError):
    pass


class OutputDir:
    """Write-only view of one directory; names may not escape it."""

    def __init__(self, root):
        self.root = Path(root).resolve()
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = (self.root / name).resolve()
        if self.root != p and self.root not in p.parents:
            raise UsageError(f"refusing to write {name!r} outside {self.root}")
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text)
        return p


# flag name -> config key; every flag defaults to "not given"
_FLAGS = {
    "simulate": ["band", "n", "seed", "rt60_min", "rt60_max", "sir_min", "sir_max", "overlap_min", "overlap_max", "solo_seconds", "wav_format"],
    "extract": ["input", "feature", "solo", "rir", "azimuth", "elevation", "distance", "array_spacings", "composite_sf", "strategy", "K", "select_seed", "ref_channel", "windowed", "pairs", "aggregation"],
    "select": ["solo", "strategy", "K", "select_seed", "ref_channel", "windowed"],
    "evaluate": ["band", "n", "seed", "workers", "rt60_min", "rt60_max", "sir_min", "sir_max", "overlap_min", "overlap_max", "solo_seconds", "K", "pairs", "aggregation"],
    "demo": ["band", "seed", "K", "pairs", "aggregation", "wav_format"],
}
_HELP = {
    "band": "RT60 band: weak, strong or custom (uses --rt60-min/--rt60-max)",
    "n": "number of mixtures",
    "seed": "master seed",
    "feature": "3d_sf, rir_sf, solo_sf, lps or composite",
    "solo": "WAV of the target talking alone (same room and position)",
    "rir": "tensor file: time-domain RIR [M, L] or STFT kernel [K, F, M]",
    "input": "multichannel mixture WAV",
    "azimuth": "source azimuth from the array axis, radians",
    "elevation": "source elevation, radians",
    "distance": "source distance from the array centre, metres",
    "array_spacings": "comma-separated microphone spacings in metres",
    "composite_sf": "spatial feature placed next to the LPS in a composite map",
    "strategy": "solo segment selection: random, max or compose",
    "K": "kernel length in frames",
    "select_seed": "seed of the random selection strategy",
    "ref_channel": "channel whose magnitudes drive selection and LPS",
    "windowed": "select by K-frame window energy instead of the start frame",
    "pairs": "'all' or a list like 0-1,2-5",
    "aggregation": "pair aggregation: mean or sum",
    "workers": "worker processes",
    "wav_format": "float32, float64 or pcm16",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="solosf", description="Solo-segment spatial features for multichannel speech.")
    parser.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    schema = RunConfig.schema()
    parser.subcommands = {}
    for name, keys in _FLAGS.items():
        p = parser.subcommands[name] = sub.add_parser(name, help=(globals()[f"cmd_{name}"].__doc__ or "").strip().splitlines()[0])
        p.add_argument("--config", help="key = value config file; flags override it")
        p.add_argument("--out", dest="out_dir", default=argparse.SUPPRESS, help="output directory")
        for key in keys:
            flag = "--" + key.replace("_", "-")
            typ = schema[key]
            if typ is bool:
                p.add_argument(flag, dest=key, action="store_true", default=argparse.SUPPRESS, help=_HELP.get(key))
            else:
                p.add_argument(flag, dest=key, type=str, default=argparse.SUPPRESS, metavar=key.upper(), help=_HELP.get(key))
    return parser


def _resolve_config(args) -> RunConfig:
    if args.config and not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")
    base = RunConfig.from_file(args.config) if args.config else RunConfig()
    changes = {}
    for key in RunConfig.schema():
        if key in vars(args):
            v = getattr(args, key)
            changes[key] = v if isinstance(v, bool) else RunConfig.parse_value(key, v)
    return base.replace(**changes)


def _header(command: str) -> str:
    return f"# solosf {command}\n# rerun with: solosf {command} --config run.cfg\n"


def _settings(cfg: RunConfig) -> ProtocolSettings:
    return ProtocolSettings(
        band=cfg.rt60_band(),
        sir_range=(cfg.sir_min, cfg.sir_max),
        overlap_range=(cfg.overlap_min, cfg.overlap_max),
        solo_duration=cfg.solo_seconds,
        fs=cfg.sample_rate,
    )


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: RunConfig, out: OutputDir) -> None:
    """Simulate protocol mixtures and write WAVs, RIR tensors and metadata."""
    settings = _settings(cfg)
    for i in range(cfg.n):
        seed = mixture_seed(cfg.seed, i)
        r = simulate_protocol_mixture(seed, settings)
        d = f"mix_{i:04d}"
        for name, wave in [("mixture", r.mixture), ("target", r.target_image), ("interference", r.interference_image), ("solo", r.solo)]:
            write_wav(wave, out.path(f"{d}/{name}.wav"), cfg.wav_format)
        save_tensor(r.target_rir.taps, out.path(f"{d}/target_rir.sst"))
        save_tensor(r.interference_rir.taps, out.path(f"{d}/interference_rir.sst"))
        sc = r.scenario
        meta = {
            "index": i,
            "mixture_seed": seed,
            "room_dims": sc.room_dims,
            "rt60_target": sc.rt60_target,
            "array_origin": sc.array_origin,
            "array_spacings": sc.array_spacings,
            "target_position": sc.source_positions[0],
            "interference_position": sc.source_positions[1],
            "sir_db": r.spec.sir_db,
            "overlap_ratio": r.spec.overlap_ratio,
            "target_onset": r.target_onset,
            "interference_onset": r.interference_onset,
            "overlap": r.overlap,
            "target_azimuth": sc.bearing(0).azimuth,
            "target_elevation": sc.bearing(0).elevation,
            "target_distance": sc.bearing(0).distance,
        }
        out.write_text(f"{d}/metadata.txt", "".join(f"{k} = {v}\n" for k, v in meta.items()))
        log.info("mixture %d/%d rt60=%.2f sir=%.1f", i + 1, cfg.n, sc.rt60_target, r.spec.sir_db)
    print(f"wrote {cfg.n} mixtures to {out.root}")


def _kernel_from_solo(cfg: RunConfig, path, config) -> ConvKernel:
    P = SoloPart.from_spectrogram(stft(read_wav(path), config), str(path))
    return select_kernel(P, cfg.K, SelectionStrategy(cfg.strategy, cfg.select_seed, cfg.ref_channel, cfg.windowed))


def _rir_kernel(cfg: RunConfig, path, config) -> ConvKernel:
    t = load_tensor(path)
    if t.ndim == 3 and np.iscomplexobj(t):
        return ConvKernel(t)
    if t.ndim == 2 and not np.iscomplexobj(t):
        return rir_to_kernel(RirTimeDomain(t, config.sample_rate), config, cfg.K)
    raise UsageError(f"{path}: expected a real [M, L] RIR or a complex [K, F, M] kernel, got {t.dtype} {t.shape}")


def _spatial(kind: str, cfg: RunConfig, Y, pairs, config):
    if kind in ("3d_sf", "sf3d"):
        if cfg.rir:
            return sf3d_from_rir(Y, _rir_kernel(cfg, cfg.rir, config), pairs)
        if math.isnan(cfg.azimuth) or math.isnan(cfg.distance):
            raise UsageError("3d_sf needs --rir or both --azimuth and --distance")
        offsets = cfg.mic_offsets()
        if len(offsets) != Y.num_channels:
            raise UsageError(f"array_spacings describe {len(offsets)} mics but the input has {Y.num_channels} channels")
        return sf3d_from_bearing(Y, SourceBearing(cfg.azimuth, cfg.elevation, cfg.distance, tuple(offsets)), pairs)
    if kind == "rir_sf":
        if not cfg.rir:
            raise UsageError("rir_sf needs --rir")
        return compute_rir_sf(Y, _rir_kernel(cfg, cfg.rir, config), pairs)
    if not cfg.solo:
        raise UsageError("solo_sf needs --solo")
    return compute_solo_sf(Y, _kernel_from_solo(cfg, cfg.solo, config), pairs)


def cmd_extract(cfg: RunConfig, out: OutputDir) -> None:
    """Compute one feature map from a mixture and write tensor and heatmap."""
    if not cfg.input:
        raise UsageError("extract needs --input")
    kind = cfg.feature
    if kind == "solo_sf" and not cfg.solo or kind == "composite" and cfg.composite_sf == "solo_sf" and not cfg.solo:
        raise UsageError(f"{kind} needs --solo")
    config = cfg.stft_config()
    Y = stft(read_wav(cfg.input), config)
    pairs = cfg.pair_set(Y.num_channels)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateKernelWarning)
        if kind == "lps":
            fmap = lps(Y, cfg.ref_channel)
        elif kind == "composite":
            fmap = assemble_composite(lps(Y, cfg.ref_channel), _spatial(cfg.composite_sf, cfg, Y, pairs, config))
        else:
            fmap = _spatial(kind, cfg, Y, pairs, config)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    save_tensor(fmap.data, out.path("feature.sst"))
    export_heatmap(fmap, out.path("feature.pgm"))
    print(f"{fmap.kind} {fmap.shape[0]}x{fmap.shape[1]} -> {out.path('feature.sst')}")


def cmd_select(cfg: RunConfig, out: OutputDir) -> None:
    """Select a solo-segment kernel and write it with a per-bin energy report."""
    if not cfg.solo:
        raise UsageError("select needs --solo")
    S = _kernel_from_solo(cfg, cfg.solo, cfg.stft_config())
    save_tensor(S.data, out.path("kernel.sst"))
    save_tensor(np.asarray(S.start_frames, dtype=np.int64), out.path("start_frames.sst"))
    rep = kernel_energy_report(S)
    lines = ["freq_bin\tchannel\tpeak_magnitude\tlow_energy\n"]
    lines += [f"{f}\t{m}\t{p:.6e}\t{int(flag)}\n" for f, m, p, flag in rep.to_rows()]
    out.write_text("energy_report.tsv", "".join(lines))
    print(f"kernel {S.shape} strategy={cfg.strategy}; {len(rep.flagged_bins)} low-energy frequency bins")


def cmd_evaluate(cfg: RunConfig, out: OutputDir) -> None:
    """Compare rir_gt / solo_compose / solo_max / solo_random / 3d_gt on a simulated batch."""
    config = cfg.stft_config()
    num_mics = len(cfg.spacings()) + 1
    table = run_protocol(
        cfg.rt60_band(), cfg.n, cfg.seed, config, cfg.K, cfg.pair_set(num_mics), cfg.workers, _settings(cfg)
    )
    tsv, summary = table.to_tsv(), table.summary()
    out.write_text("report.tsv", tsv)
    out.write_text("summary.txt", summary)
    sys.stdout.write(tsv + "\n" + summary)


def cmd_demo(cfg: RunConfig, out: OutputDir) -> None:
    """Simulate one mixture and write it with feature heatmaps and a per-method report."""
    config = cfg.stft_config()
    r = simulate_protocol_mixture(mixture_seed(cfg.seed, 0), _settings(cfg))
    write_wav(r.mixture, out.path("mixture.wav"), cfg.wav_format)
    Y = stft(r.mixture, config)
    pairs = cfg.pair_set(Y.num_channels)
    feats = method_features(r, config, cfg.K, pairs, cfg.seed)
    export_heatmap(lps(Y, cfg.ref_channel), out.path("lps.pgm"))
    export_heatmap(feats["3d_gt"], out.path("sf3d.pgm"))
    export_heatmap(feats["rir_gt"], out.path("rir_sf.pgm"))
    export_heatmap(feats["solo_compose"], out.path("solo_sf.pgm"))
    mask = oracle_dominance_mask(stft(r.target_image, config), stft(r.interference_image, config))
    lines = ["\t".join(REPORT_COLUMNS) + "\n"]
    for m in METHODS:
        s = score_feature(feats[m], mask)
        lines.append(f"{m}\t{band_label(cfg.rt60_band())}\t{r.spec.sir_db:.4f}\t{s.separation:.6f}\t{s.auc:.6f}\t1\n")
    out.write_text("report.tsv", "".join(lines))
    sys.stdout.write("".join(lines))


# --------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    command = args.command
    try:
        cfg = _resolve_config(args)
        out = OutputDir(cfg.out_dir)
        globals()[f"cmd_{command}"](cfg, out)
        out.write_text("run.cfg", _header(command) + cfg.to_text())
    except (UsageError, FileNotFoundError) as exc:
        parser.subcommands[command].print_usage(sys.stderr)
        print(f"solosf {command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"solosf {command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
