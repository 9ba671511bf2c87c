"""Command-line pipeline: synth, estimate, nowcast, verify, analyze.

Every command validates file magic before reading payloads, honors a flat
key=value config file (command-line flags win), and exits 0 on success, 1 on
runtime/data errors, and 2 on usage errors. VOXFLOW_THREADS caps per-level
parallelism of the estimator.
"""

from __future__ import annotations

import argparse
import re
import sys
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from . import analysis, rvol, svgplot
from .advect import extrapolate
from .denoise import denoise_volume
from .errors import FormatError, NoOverlapError
from .flow import Criterion, LossConfig
from .grid import MotionField, RadarVolume, cmax
from .lucas_kanade import estimate_lucas_kanade
from .synth import PRESET_NAMES, generate, preset
from .transform import rain_to_dbr, rain_to_dbz, volume_to_rain
from .variational import OptimizerConfig, default_threads, estimate_variational
from .verify import verify_nowcast


def _fmt(v: float) -> str:
    if isinstance(v, float) and np.isnan(v):
        return "nan"
    return f"{v:.10g}"


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(c) if isinstance(c, float) else str(c)
                              for c in row))
    path.write_text("\n".join(lines) + "\n")


def _parse_scales(text: str) -> tuple[int, ...]:
    return tuple(int(s) for s in text.split(",") if s.strip())


def _parse_floats(text: str) -> list[float]:
    return [float(s) for s in text.split(",") if s.strip()]


_TS_RE = re.compile(r"(\d{8})[T_-]?(\d{4})")


def parse_stem_timestamp(stem: str) -> datetime | None:
    m = _TS_RE.search(stem)
    if not m:
        return None
    try:
        return datetime.strptime(m.group(1) + m.group(2), "%Y%m%d%H%M")
    except ValueError:
        return None


def _load_config(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line is not key = value: {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _apply_config(parser: argparse.ArgumentParser, sub: argparse.ArgumentParser,
                  argv: list[str]) -> argparse.Namespace:
    """Two-pass parse so config-file values become defaults that explicit
    flags override."""
    args, _ = parser.parse_known_args(argv)
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        known = {a.dest: a for a in sub._actions}
        values = _load_config(cfg_path)
        defaults = {}
        for key, text in values.items():
            if key not in known:
                parser.error(f"unknown config key: {key}")
            action = known[key]
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = text.lower() in ("1", "true", "yes", "on")
            elif action.type is not None:
                defaults[key] = action.type(text)
            else:
                defaults[key] = text
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="flat key = value config file; "
                                      "command-line flags override it")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="voxflow",
        description="volumetric radar-echo motion estimation and "
                    "extrapolation nowcasting")
    subs = parser.add_subparsers(dest="command", required=True)
    table = {}

    p = subs.add_parser("synth", help="generate a synthetic volume + truth motion")
    # required, but validated after the config file is applied
    p.add_argument("--preset", choices=PRESET_NAMES, default=None)
    p.add_argument("-o", "--out", default=None, help="output .rvol path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=None,
                   help="override the preset's frame count")
    p.add_argument("--crop-scale", action="store_true",
                   help="512 x 512 geometry for the uniform preset")
    p.add_argument("--quantize", action="store_true",
                   help="store reflectivity as 8-bit (0.5 dBZ steps)")
    _add_common(p)
    table["synth"] = p

    p = subs.add_parser("estimate", help="estimate a motion field from a volume")
    p.add_argument("volume", help="input .rvol path")
    p.add_argument("--mode", choices=("3d", "2d-cmax", "lk"), default="3d")
    p.add_argument("-o", "--out", default=None, help="output .rmf path")
    p.add_argument("--trace", default=None, help="loss trace CSV path")
    p.add_argument("--inputs", type=int, default=8,
                   help="number of observed frames fed to the estimator")
    p.add_argument("--use-future", action="store_true",
                   help="fit mode: include the remaining frames in the loss")
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--scales", type=str, default="1,2,4,8")
    p.add_argument("--iters", type=int, default=120)
    p.add_argument("--step", type=float, default=0.5)
    p.add_argument("--momentum", type=float, default=0.85)
    p.add_argument("--levels", type=int, default=3,
                   help="coarse-to-fine pyramid levels")
    p.add_argument("--criterion", choices=("mae", "mse"), default="mae")
    p.add_argument("--denoise", action="store_true",
                   help="apply quality control before estimation")
    p.add_argument("--window", type=int, default=15,
                   help="window size of the lk baseline")
    _add_common(p)
    table["estimate"] = p

    p = subs.add_parser("nowcast", help="extrapolate a volume with a motion field")
    p.add_argument("volume", help="input .rvol path")
    p.add_argument("motion", help="input .rmf path")
    p.add_argument("-k", "--leads", type=int, required=True)
    p.add_argument("-o", "--out", default=None, help="output forecast .rvol")
    p.add_argument("--start-frame", type=int, default=-1,
                   help="frame index advected forward (default: last)")
    _add_common(p)
    table["nowcast"] = p

    p = subs.add_parser("verify", help="score a forecast volume against truth")
    p.add_argument("forecast", help="forecast .rvol path")
    p.add_argument("truth", help="observed .rvol path")
    p.add_argument("-o", "--out", default=None, help="metrics CSV path")
    p.add_argument("--thresholds", type=str, default="1,5,10",
                   help="rain-rate thresholds in mm/h")
    p.add_argument("--offset", type=int, default=None,
                   help="truth frame index of lead 1 (default: aligned ends)")
    _add_common(p)
    table["verify"] = p

    p = subs.add_parser("analyze", help="dataset analyses over a directory of volumes")
    p.add_argument("directory", help="directory of .rvol files")
    p.add_argument("--which", required=True,
                   choices=("ratios", "refl-corr", "motion-corr", "histogram",
                            "outliers", "split"))
    p.add_argument("-o", "--outdir", default=None,
                   help="report directory (default: the dataset directory)")
    p.add_argument("--thresholds-dbz", type=str, default="0,20")
    p.add_argument("--threshold", type=float, default=1.0,
                   help="mm/h threshold of the split diagnostic")
    p.add_argument("--coverage-dbz", type=float, default=20.0)
    p.add_argument("--level-pair", type=str, default="0,2",
                   help="low,mid level indices for pair analyses")
    p.add_argument("--gap-minutes", type=float, default=60.0)
    p.add_argument("--top-k", type=int, default=3)
    p.add_argument("--bins", type=int, default=20)
    _add_common(p)
    table["analyze"] = p

    return parser, table


def _cmd_synth(args, parser: argparse.ArgumentParser) -> int:
    if not args.preset:
        parser.error("--preset is required")
    if not args.out:
        parser.error("an output path (-o/--out) is required")
    scn = preset(args.preset, frames=args.frames, seed=args.seed,
                 crop_scale=args.crop_scale)
    vol, truth = generate(scn)
    out = Path(args.out)
    rvol.write_rvol(out, vol, quantize=args.quantize)
    truth_path = out.with_suffix(".truth.rmf")
    rvol.write_motion(truth_path, truth)
    t, z, y, x = vol.shape
    print(f"wrote {out} ({t} x {z} x {y} x {x}, dt={vol.dt:.0f}s) "
          f"and {truth_path}")
    print(f"cells: {len(scn.cells)}")
    if scn.rotation_omega is not None:
        print(f"motion: rigid rotation, {np.degrees(scn.rotation_omega):.2f} deg/step")
    else:
        for zi in range(z):
            vels = sorted({(float(vx), float(vy)) for vx, vy in scn.velocities[zi]})
            text = ", ".join(f"({vx:g}, {vy:g})" for vx, vy in vels)
            print(f"level {zi}: velocities {text}")
    return 0


def _loss_config(args, n_inputs: int, m_future: int) -> LossConfig:
    crit = Criterion.MAE_DBR if args.criterion == "mae" else Criterion.MSE_DBR
    return LossConfig(beta=args.beta, scales=_parse_scales(args.scales),
                      criterion=crit, n_inputs=max(n_inputs, 2),
                      m_future=m_future)


def _cmd_estimate(args) -> int:
    vol = rvol.read_rvol(args.volume)
    if args.denoise:
        vol = denoise_volume(vol)
    if args.mode == "2d-cmax":
        vol = cmax(vol)
    t_total = vol.shape[0]
    n = min(args.inputs, t_total)
    if n < 2:
        raise ValueError(f"need at least 2 input frames, volume has {t_total}")

    stem = Path(args.volume)
    out = Path(args.out) if args.out else stem.with_suffix(".rmf")
    trace_path = Path(args.trace) if args.trace else \
        out.with_name(out.stem + "_trace.csv")

    if args.mode == "lk":
        a = rain_to_dbr(volume_to_rain(cmax(vol) if vol.shape[1] > 1 else vol,
                                       n - 2))
        b = rain_to_dbr(volume_to_rain(cmax(vol) if vol.shape[1] > 1 else vol,
                                       n - 1))
        res = estimate_lucas_kanade(a.data[0], b.data[0], window=args.window)
        rvol.write_motion(out, res.motion)
        _write_csv(trace_path,
                   ["level", "iteration", "loss_total", "loss_multiscale",
                    "loss_divergence"], [])
        flag = " (all pixels rejected)" if res.all_rejected else ""
        print(f"wrote {out} (lk baseline{flag}) and {trace_path}")
        return 0

    inputs = [volume_to_rain(vol, t) for t in range(n)]
    future = None
    if args.use_future and t_total > n:
        future = [volume_to_rain(vol, t) for t in range(n, t_total)]
    cfg = _loss_config(args, n, len(future) if future else 0)
    opt = OptimizerConfig(max_iters=args.iters, step_size=args.step,
                          momentum=args.momentum,
                          coarse_to_fine_levels=args.levels)
    result = estimate_variational(inputs, future=future, cfg=cfg, opt=opt,
                                  threads=default_threads())
    rvol.write_motion(out, result.motion)
    rows = []
    for z, trace in enumerate(result.traces):
        for i, (tot, data, div) in enumerate(trace):
            rows.append([z, i, float(tot), float(data), float(div)])
    _write_csv(trace_path, ["level", "iteration", "loss_total",
                            "loss_multiscale", "loss_divergence"], rows)
    statuses = ",".join(s.value for s in result.statuses)
    print(f"wrote {out} (levels: {statuses}) and {trace_path}")
    return 0


def _cmd_nowcast(args, parser: argparse.ArgumentParser) -> int:
    if args.leads < 1:
        parser.error("--leads must be >= 1")
    vol = rvol.read_rvol(args.volume)
    mf = rvol.read_motion(args.motion)
    start = args.start_frame if args.start_frame >= 0 else vol.shape[0] - 1
    if start >= vol.shape[0]:
        raise ValueError(f"start frame {start} outside volume (T={vol.shape[0]})")
    last = volume_to_rain(vol, start)
    if mf.nz != last.nz:
        raise ValueError(f"motion has Z={mf.nz}, volume has Z={last.nz}")
    leads = extrapolate(last, mf, args.leads)
    data = np.stack([rain_to_dbz(f) for f in leads])
    mask = np.logical_and.reduce([f.mask for f in leads])
    forecast = RadarVolume(data=data, z_levels=vol.z_levels, dt=vol.dt,
                           mask=mask)
    out = Path(args.out) if args.out else \
        Path(args.volume).with_suffix(".nowcast.rvol")
    rvol.write_rvol(out, forecast)
    print(f"wrote {out} ({args.leads} leads from frame {start})")
    return 0


def _cmd_verify(args) -> int:
    fc = rvol.read_rvol(args.forecast)
    truth = rvol.read_rvol(args.truth)
    if fc.shape[1:] != truth.shape[1:]:
        raise ValueError(f"grid mismatch: forecast {fc.shape[1:]} vs "
                         f"truth {truth.shape[1:]}")
    k = fc.shape[0]
    offset = args.offset if args.offset is not None else truth.shape[0] - k
    if offset < 0 or offset + k > truth.shape[0]:
        raise ValueError(f"truth volume (T={truth.shape[0]}) cannot cover "
                         f"{k} leads at offset {offset}")
    preds = [volume_to_rain(fc, t) for t in range(k)]
    obss = [volume_to_rain(truth, offset + t) for t in range(k)]
    thresholds = _parse_floats(args.thresholds)
    report = verify_nowcast(preds, obss, thresholds)
    sample_id = Path(args.forecast).stem
    rows = []
    for lead in report.leads:
        me, mae, mse = report.continuous(lead)
        rows.append([sample_id, lead, "me", "", float(me)])
        rows.append([sample_id, lead, "mae", "", float(mae)])
        rows.append([sample_id, lead, "mse", "", float(mse)])
        for thr in thresholds:
            p, r, e = report.categorical(lead, thr)
            rows.append([sample_id, lead, "precision", _fmt(thr), float(p)])
            rows.append([sample_id, lead, "recall", _fmt(thr), float(r)])
            rows.append([sample_id, lead, "ets", _fmt(thr), float(e)])
    out = Path(args.out) if args.out else \
        Path(args.forecast).with_suffix(".metrics.csv")
    _write_csv(out, ["sample_id", "lead_steps", "metric", "threshold_mmh",
                     "value"], rows)
    print(f"wrote {out} ({len(rows)} rows)")
    return 0


def _dataset(directory: str):
    files = sorted(Path(directory).glob("*.rvol"))
    files = [f for f in files if not f.name.endswith(".nowcast.rvol")]
    if not files:
        raise ValueError("no volumes found")
    epoch = datetime(2000, 1, 1)
    out = []
    for idx, f in enumerate(files):
        ts = parse_stem_timestamp(f.stem) or (epoch + timedelta(minutes=5 * idx))
        out.append((f, f.stem, ts))
    return out


def _motion_for(path: Path) -> MotionField | None:
    for cand in (path.with_suffix(".rmf"), path.with_suffix(".truth.rmf")):
        if cand.exists():
            return rvol.read_motion(cand)
    return None


def _pair_samples(files, low: int, mid: int, coverage_dbz: float):
    """Per-sample (id, timestamp, coverage, low/mid motion correlation)."""
    samples = []
    skipped = 0
    for path, stem, ts in files:
        vol = rvol.read_rvol(path)
        mf = _motion_for(path)
        if mf is None:
            skipped += 1
            continue
        cov = analysis.coverage_ratio(vol, threshold_dbz=coverage_dbz)
        corr = analysis.motion_pair_corr(mf, vol, low, mid)
        samples.append(analysis.OutlierSample(sample_id=stem, timestamp=ts,
                                              coverage=cov, correlation=corr))
    if skipped:
        print(f"note: {skipped} volume(s) had no motion file and were skipped",
              file=sys.stderr)
    return samples


def _cmd_analyze(args) -> int:
    files = _dataset(args.directory)
    outdir = Path(args.outdir) if args.outdir else Path(args.directory)
    outdir.mkdir(parents=True, exist_ok=True)
    low, mid = (int(s) for s in args.level_pair.split(","))

    if args.which == "ratios":
        thresholds = _parse_floats(args.thresholds_dbz)
        ratios = []
        per_sample = []
        for path, stem, ts in files:
            vol = rvol.read_rvol(path)
            r = analysis.rainy_ratio(vol, thresholds)
            ratios.append(r)
            per_sample.append((stem, ts, r))
        mean = np.mean(ratios, axis=0)
        rows = [[z, _fmt(thr), float(mean[z, j])]
                for z in range(mean.shape[0])
                for j, thr in enumerate(thresholds)]
        _write_csv(outdir / "rainy_ratios.csv",
                   ["level", "threshold_dbz", "fraction"], rows)
        series = {f"> {thr:g} dBZ": [(z, float(mean[z, j]))
                                     for z in range(mean.shape[0])]
                  for j, thr in enumerate(thresholds)}
        svgplot.line_chart(series, outdir / "rainy_ratios.svg",
                           title="rainy-pixel ratio by altitude level",
                           x_label="level index", y_label="fraction")
        if len(thresholds) > 1:
            vals = [float(r[0, 1]) for _, _, r in per_sample]
        else:
            vals = [float(r[0, 0]) for _, _, r in per_sample]
        stats = analysis.monthwise_boxstats(vals, [ts for _, ts, _ in per_sample])
        rows = [[m, s.q1, s.median, s.q3, s.lo_whisker, s.hi_whisker,
                 s.count, ";".join(_fmt(o) for o in s.outliers)]
                for m, s in stats.items()]
        _write_csv(outdir / "rainy_ratio_monthwise.csv",
                   ["month", "q1", "median", "q3", "lo_whisker", "hi_whisker",
                    "count", "outliers"], rows)
        svgplot.box_plot({str(m): s for m, s in stats.items()},
                         outdir / "rainy_ratio_monthwise.svg",
                         title="monthly rainy-pixel ratio, lowest level",
                         y_label="fraction")
        print(f"wrote ratios reports to {outdir}")
        return 0

    if args.which == "refl-corr":
        vols = [rvol.read_rvol(path) for path, _, _ in files]
        mat = analysis.reflectivity_corr_matrix(vols)
        _write_matrix(outdir / "reflectivity_corr.csv", mat)
        svgplot.heatmap(mat, outdir / "reflectivity_corr.svg",
                        title="reflectivity correlation by level pair",
                        vmin=-1.0, vmax=1.0)
        print(f"wrote reflectivity correlation to {outdir}")
        return 0

    if args.which == "motion-corr":
        mfs, vols, stamps, corrs = [], [], [], []
        for path, stem, ts in files:
            mf = _motion_for(path)
            if mf is None:
                continue
            vol = rvol.read_rvol(path)
            mfs.append(mf)
            vols.append(vol)
            stamps.append(ts)
            corrs.append(analysis.motion_pair_corr(mf, vol, low, mid))
        if not mfs:
            raise ValueError("no motion files found next to the volumes")
        for component in ("both", "u", "v"):
            mat = analysis.motion_corr_matrix(mfs, vols, component=component)
            _write_matrix(outdir / f"motion_corr_{component}.csv", mat)
            if component == "both":
                svgplot.heatmap(mat, outdir / "motion_corr.svg",
                                title="motion correlation by level pair",
                                vmin=-1.0, vmax=1.0)
        finite = [(c, ts) for c, ts in zip(corrs, stamps) if np.isfinite(c)]
        if finite:
            stats = analysis.monthwise_boxstats([c for c, _ in finite],
                                                [ts for _, ts in finite])
            rows = [[m, s.q1, s.median, s.q3, s.lo_whisker, s.hi_whisker,
                     s.count, ";".join(_fmt(o) for o in s.outliers)]
                    for m, s in stats.items()]
            _write_csv(outdir / "motion_corr_monthwise.csv",
                       ["month", "q1", "median", "q3", "lo_whisker",
                        "hi_whisker", "count", "outliers"], rows)
            svgplot.box_plot({str(m): s for m, s in stats.items()},
                             outdir / "motion_corr_monthwise.svg",
                             title=f"monthly motion correlation, levels "
                                   f"{low}/{mid}",
                             y_label="Pearson correlation")
        print(f"wrote motion correlation reports to {outdir}")
        return 0

    if args.which == "histogram":
        samples = _pair_samples(files, low, mid, args.coverage_dbz)
        pairs = [(s.coverage, s.correlation) for s in samples]
        cov_edges = np.linspace(0.0, 1.0, args.bins + 1)
        corr_edges = np.linspace(-1.0, 1.0, args.bins + 1)
        counts, xe, ye = analysis.coverage_vs_corr_histogram(pairs, cov_edges,
                                                             corr_edges)
        rows = []
        for i in range(counts.shape[0]):
            for j in range(counts.shape[1]):
                rows.append([_fmt(float(xe[i])), _fmt(float(xe[i + 1])),
                             _fmt(float(ye[j])), _fmt(float(ye[j + 1])),
                             int(counts[i, j])])
        _write_csv(outdir / "coverage_vs_corr.csv",
                   ["coverage_lo", "coverage_hi", "corr_lo", "corr_hi",
                    "count"], rows)
        _write_csv(outdir / "coverage_vs_corr_samples.csv",
                   ["sample_id", "timestamp", "coverage", "correlation"],
                   [[s.sample_id, s.timestamp.isoformat(), s.coverage,
                     s.correlation] for s in samples])
        svgplot.heatmap(counts.T[::-1], outdir / "coverage_vs_corr.svg",
                        title="sample density: coverage vs motion correlation")
        print(f"wrote histogram reports to {outdir}")
        return 0

    if args.which == "outliers":
        samples = _pair_samples(files, low, mid, args.coverage_dbz)
        usable = [s for s in samples if np.isfinite(s.correlation)]
        ranked = analysis.rank_outliers(usable, args.top_k,
                                        gap_minutes=args.gap_minutes)
        by_id = {s.sample_id: s for s in usable}
        rows = [[rank + 1, sid, by_id[sid].timestamp.isoformat(),
                 by_id[sid].coverage, by_id[sid].correlation]
                for rank, sid in enumerate(ranked.ids)]
        _write_csv(outdir / "outliers.csv",
                   ["rank", "sample_id", "timestamp", "coverage",
                    "correlation"], rows)
        if ranked.exhausted:
            print(f"note: only {len(ranked.ids)} of {args.top_k} requested "
                  "samples available", file=sys.stderr)
        print(f"wrote outlier ranking to {outdir}")
        return 0

    # split diagnostic: treat each volume's frames as nowcast leads
    for path, stem, _ in files:
        vol = rvol.read_rvol(path)
        seq = [volume_to_rain(vol, t) for t in range(vol.shape[0])]
        diag = analysis.cell_split_diagnostic(seq, threshold=args.threshold)
        rows = []
        for li in range(len(seq)):
            per_level = ";".join(str(c) for c in diag.level_counts[li])
            rows.append([li, diag.cmax_counts[li], per_level,
                         diag.cmax_rainy_cells[li]])
        _write_csv(outdir / f"{stem}_split.csv",
                   ["lead", "cmax_components", "level_components",
                    "cmax_rainy_cells"], rows)
        svgplot.line_chart(
            {"cmax components": [(li, diag.cmax_counts[li])
                                 for li in range(len(seq))]},
            outdir / f"{stem}_split.svg",
            title=f"{stem}: component count of thresholded composite",
            x_label="lead", y_label="components")
    print(f"wrote split diagnostics to {outdir}")
    return 0


def _write_matrix(path: Path, mat: np.ndarray) -> None:
    rows = [[i] + [float(v) for v in mat[i]] for i in range(mat.shape[0])]
    _write_csv(path, ["level"] + [str(j) for j in range(mat.shape[1])], rows)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, table = build_parser()
    # first pass only to discover the subcommand for config handling
    pre, _ = parser.parse_known_args(argv)
    args = _apply_config(parser, table[pre.command], argv)
    try:
        if args.command == "synth":
            return _cmd_synth(args, table["synth"])
        if args.command == "estimate":
            return _cmd_estimate(args)
        if args.command == "nowcast":
            return _cmd_nowcast(args, table["nowcast"])
        if args.command == "verify":
            return _cmd_verify(args)
        return _cmd_analyze(args)
    except (FormatError, NoOverlapError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
