"""Command-line pipeline: gen-data, train, deblur, evaluate, bench.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
Every command writes canonical file names and sorted JSON, so reruns with
the same configuration produce byte-identical artifacts; wall-clock
timings go to separate log files only.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import subprocess
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .cnn import TrainConfig, forward, from_channels, init_model, to_channels, train
from .data import (AugmentParams, PhantomParams, Protocol, build_dataset, make_phantom_sequence,
                   make_protocol, normalize_frame)
from .io import (RunConfig, atomic_write, config_hash, load_config, read_cimg, read_fmap,
                 read_kspc, read_model, read_traj, write_cimg, write_fmap, write_kspc,
                 write_model, write_traj)
from .ir import CgConfig, ir_deblur
from .metrics import aggregate, hfen, psnr, ssim
from .mfi import build_mfi_bank, mfi_deblur
from .offres import build_segmented
from .transform import build_plan, nufft_adjoint, pipe_menon_density

log = logging.getLogger("spiraldeblur")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
THREADS_ENV = "SPIRAL_DEBLUR_THREADS"
METHODS = ("none", "mfi", "ir", "cnn")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_DATA):
        super().__init__(message)
        self.code = code


def version_string() -> str:
    """``git describe`` of the source tree when available, else ``v<version>``."""
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return f"v{__version__}-g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def resolve_threads(flag: int | None) -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise CliError(f"{THREADS_ENV} must be an integer, got {env!r}", EXIT_USAGE) from None
    else:
        n = flag if flag is not None else (os.cpu_count() or 1)
    if n < 1:
        raise CliError(f"thread count must be >= 1, got {n}", EXIT_USAGE)
    return n


def _dump_json(path, doc):
    atomic_write(path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())


def _file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _parallel_map(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _frame_stem(subject: int, frame: int) -> str:
    return f"s{subject:03d}/f{frame:04d}"


# ---------------------------------------------------------------- dataset dir


def _protocol_specs(cfg: RunConfig):
    t = cfg.trajectory
    return {"short": (t.short_t_read, t.short_interleaves), "long": (t.long_t_read, t.long_interleaves)}


class DatasetDir:
    """A dataset written by ``gen-data``, addressed through its manifest."""

    def __init__(self, root):
        self.root = Path(root)
        path = self.root / "manifest.json"
        if not path.is_file():
            raise CliError(f"{self.root}: no dataset manifest (manifest.json)")
        self.manifest = json.loads(path.read_text())
        if self.manifest.get("kind") != "dataset":
            raise CliError(f"{path}: not a dataset manifest")
        self.config = RunConfig.from_dict(self.manifest["config"])
        self._protocols = {}

    @property
    def protocol_names(self):
        return sorted(self.manifest["protocols"])

    def subjects(self, split: str):
        if split == "all":
            return sorted(s for ids in self.manifest["splits"].values() for s in ids)
        if split not in self.manifest["splits"]:
            raise CliError(f"unknown split {split!r}", EXIT_USAGE)
        return list(self.manifest["splits"][split])

    def frames(self, split: str):
        n = self.manifest["n_frames"]
        return [(s, f) for s in self.subjects(split) for f in range(n)]

    def protocol(self, name: str) -> Protocol:
        if name not in self.manifest["protocols"]:
            raise CliError(f"dataset has no protocol {name!r} (have {self.protocol_names})", EXIT_USAGE)
        if name not in self._protocols:
            t = self.config.trajectory
            traj = read_traj(self.root / self.manifest["protocols"][name]["traj_file"],
                             matrix=t.matrix, name=name)
            plan = build_plan(traj, oversampling=t.oversampling, kernel_width=t.kernel_width)
            self._protocols[name] = Protocol(name, traj, plan,
                                             pipe_menon_density(traj, plan, iters=t.density_iters))
        return self._protocols[name]

    def path(self, subject, frame, suffix) -> Path:
        return self.root / f"{_frame_stem(subject, frame)}_{suffix}"

    def truth(self, s, f):
        return read_cimg(self.path(s, f, "truth.cimg")).astype(np.complex128)

    def fieldmap(self, s, f):
        return read_fmap(self.path(s, f, "fmap.fmap")).astype(np.float64)

    def blurred(self, s, f, protocol):
        return read_cimg(self.path(s, f, f"{protocol}.cimg")).astype(np.complex128)

    def kspace(self, s, f, protocol):
        return read_kspc(self.path(s, f, f"{protocol}.kspc"))


# ---------------------------------------------------------------- commands


def cmd_gen_data(args, cfg: RunConfig, threads: int):
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").unlink(missing_ok=True)
        probe = out / ".write-probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise CliError(f"cannot write to {out}: {exc}") from None

    t = cfg.trajectory
    protocols = [make_protocol(name, t.matrix, t_read, t.dwell, n_int, t.density_iters,
                               t.oversampling, t.kernel_width)
                 for name, (t_read, n_int) in _protocol_specs(cfg).items()]
    params = PhantomParams(seed=cfg.dataset.seed, matrix=t.matrix, **_fields(cfg.phantom))
    aug = AugmentParams(**_fields(cfg.augment))
    log.info("simulating %d subjects x %d frames", cfg.dataset.n_subjects, params.n_frames)
    ds = build_dataset(cfg.dataset.n_subjects, params, aug, protocols, seed=cfg.dataset.seed,
                       threads=threads)

    for p in protocols:
        write_traj(out / f"traj_{p.name}.traj", p.traj)
    for subject in sorted({r.subject for r in ds.records}):
        (out / f"s{subject:03d}").mkdir(exist_ok=True)

    def write(r):
        stem = out / _frame_stem(r.subject, r.frame)
        write_cimg(f"{stem}_truth.cimg", r.truth)
        write_fmap(f"{stem}_fmap.fmap", r.augmented)
        for name in sorted(r.blurred):
            write_cimg(f"{stem}_{name}.cimg", r.blurred[name])
            write_kspc(f"{stem}_{name}.kspc", r.kspace[name])

    _parallel_map(write, ds.records, threads)
    n_rec = len(ds.records)
    manifest = {
        "kind": "dataset",
        "version": version_string(),
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "trajectory_hash": config_hash(cfg, "trajectory"),
        "n_frames": params.n_frames,
        "splits": ds.splits,
        "protocols": {p.name: {"t_read": p.traj.readout_duration,
                               "n_interleaves": p.traj.n_interleaves,
                               "traj_file": f"traj_{p.name}.traj"} for p in protocols},
        "augmentation": [{"subject": r.subject, "frame": r.frame, "alpha": r.alpha, "beta": r.beta}
                         for r in ds.records],
        "counts": {"truth_cimg": n_rec, "fmap": n_rec,
                   "blurred_cimg": n_rec * len(protocols), "kspc": n_rec * len(protocols),
                   "traj": len(protocols)},
    }
    _dump_json(out / "manifest.json", manifest)
    print(f"wrote {n_rec} frames x {len(protocols)} protocols to {out}")


def _fields(section):
    import dataclasses
    return {f.name: getattr(section, f.name) for f in dataclasses.fields(section)}


def _pairs(ds: DatasetDir, split: str):
    xs, ys = [], []
    for s, f in ds.frames(split):
        truth = ds.truth(s, f)
        for name in ds.protocol_names:
            blurred = ds.blurred(s, f, name)
            scale = normalize_frame(blurred)[1]
            xs.append(to_channels(blurred / scale))
            ys.append(to_channels(truth / scale))
    if not xs:
        return None
    return np.stack(xs), np.stack(ys)


def cmd_train(args, cfg: RunConfig, threads: int):
    ds = DatasetDir(args.data)
    c = cfg.cnn
    train_set = _pairs(ds, "train")
    if train_set is None:
        raise CliError("the dataset's train split is empty")
    val_set = _pairs(ds, "val")
    if val_set is None:
        raise CliError("the dataset's validation split is empty")
    tcfg = TrainConfig(lr=c.lr, batch_size=c.batch_size, epochs=c.epochs, lam_gdl=c.lam_gdl,
                       seed=c.train_seed, patience=c.patience, patch=c.patch,
                       crops_per_frame=c.crops_per_frame, eval_frames=c.eval_frames)
    model, tlog = train(init_model(c.init_seed, zero_last=c.zero_last_layer), train_set, val_set, tcfg)
    out = Path(args.out)
    write_model(out, model)
    log_path = Path(args.log) if args.log else out.with_suffix(".csv")
    tlog.to_csv(log_path)
    _dump_json(out.with_suffix(".json"), {
        "kind": "model", "version": version_string(), "config_hash": config_hash(cfg),
        "dataset_config_hash": ds.manifest["config_hash"], "best_epoch": tlog.best_epoch,
        "epochs_run": len(tlog.epochs)})
    print(f"best epoch {tlog.best_epoch}: val loss {min([tlog.initial_val_loss] + tlog.val_loss):.6f} "
          f"(initial {tlog.initial_val_loss:.6f}); wrote {out}")


def _fmap_range(ds_fmaps, frames, cfg):
    lo, hi = cfg.mfi.f_min, cfg.mfi.f_max
    if lo is None or hi is None:
        vals = [ds_fmaps.fieldmap(s, f) for s, f in frames]
        lo = min(float(v.min()) for v in vals) if lo is None else lo
        hi = max(float(v.max()) for v in vals) if hi is None else hi
    return lo, hi


def cmd_deblur(args, cfg: RunConfig, threads: int):
    method = args.method
    if method in ("mfi", "ir") and not args.fieldmaps:
        raise CliError(f"method {method!r} requires a field map: pass --fieldmaps DIR", EXIT_USAGE)
    if method == "cnn" and not args.model:
        raise CliError("method 'cnn' requires a model checkpoint: pass --model PATH", EXIT_USAGE)
    ds = DatasetDir(args.data)
    fm = DatasetDir(args.fieldmaps) if args.fieldmaps else None
    proto = ds.protocol(args.protocol)
    frames = ds.frames(args.split)
    if args.limit is not None:
        frames = frames[:args.limit]
    if not frames:
        raise CliError(f"split {args.split!r} has no frames")
    for s, f in frames:
        if not ds.path(s, f, f"{proto.name}.kspc").is_file():
            raise CliError(f"missing k-space input {ds.path(s, f, f'{proto.name}.kspc')}")
        if fm is not None and not fm.path(s, f, "fmap.fmap").is_file():
            raise CliError(f"missing field map {fm.path(s, f, 'fmap.fmap')}")

    extra = {}
    if method == "mfi":
        lo, hi = _fmap_range(fm, frames, cfg)
        bank = build_mfi_bank(proto.traj, lo, hi, cfg.mfi.l_mfi)
        extra["mfi"] = {"f_min": lo, "f_max": hi, "bins": len(bank.frequencies),
                        "fit_residual": bank.fit_residual}
    elif method == "ir":
        cg = CgConfig(max_iters=cfg.ir.max_iters, tol=cfg.ir.tol, lam=cfg.ir.lam)
    elif method == "cnn":
        model = read_model(args.model)
        extra["model_sha256"] = _file_sha256(args.model)

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").unlink(missing_ok=True)
    except OSError as exc:
        raise CliError(f"cannot write to {out}: {exc}") from None

    def run(sf):
        s, f = sf
        data = ds.kspace(s, f, proto.name)
        t0 = time.perf_counter()
        info = {}
        if method == "none":
            img = nufft_adjoint(data, proto.plan, proto.density)
        elif method == "mfi":
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                img, n_clamped = mfi_deblur(data, fm.fieldmap(s, f), bank, proto.plan, proto.density,
                                            proto.traj, return_clamped=True)
            info["clamped"] = int(n_clamped)
        elif method == "ir":
            seg = build_segmented(fm.fieldmap(s, f), proto.traj, proto.plan, cfg.ir.n_segments)
            img, rep = ir_deblur(data, fm.fieldmap(s, f), proto.traj, proto.plan, cg, model=seg)
            info["iterations"] = rep.iterations
        else:
            grid = nufft_adjoint(data, proto.plan, proto.density)
            norm, scale = normalize_frame(grid)
            img = from_channels(forward(model, to_channels(norm))) * scale
        elapsed = time.perf_counter() - t0
        (out / f"s{s:03d}").mkdir(exist_ok=True)
        name = f"{_frame_stem(s, f)}_{proto.name}_{method}.cimg"
        write_cimg(out / name, img)
        return {"subject": s, "frame": f, "file": name, **info}, elapsed

    results = _parallel_map(run, frames, threads)
    with open(out / "latency.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject", "frame", "latency_ms"])
        for rec, dt in results:
            w.writerow([rec["subject"], rec["frame"], f"{dt * 1e3:.3f}"])
    manifest = {
        "kind": "results",
        "version": version_string(),
        "method": method,
        "protocol": proto.name,
        "t_read": proto.traj.readout_duration,
        "config_hash": config_hash(cfg),
        "trajectory_hash": ds.manifest["trajectory_hash"],
        "dataset_config_hash": ds.manifest["config_hash"],
        "frames": [rec for rec, _ in results],
        **extra,
    }
    _dump_json(out / "manifest.json", manifest)
    ms = np.array([dt for _, dt in results]) * 1e3
    print(f"{method}/{proto.name}: {len(results)} frames, {ms.mean():.1f} +- {ms.std():.1f} ms per frame")


def cmd_evaluate(args, cfg: RunConfig, threads: int):
    ds = DatasetDir(args.truth)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, series = [], {}
    for rdir in map(Path, args.results):
        mpath = rdir / "manifest.json"
        if not mpath.is_file():
            raise CliError(f"{rdir}: no results manifest")
        man = json.loads(mpath.read_text())
        if man.get("kind") != "results":
            raise CliError(f"{mpath}: not a results manifest")
        if man["trajectory_hash"] != ds.manifest["trajectory_hash"] and not args.force:
            raise CliError(f"{rdir} was generated under a different trajectory config than "
                           f"{ds.root}; pass --force to compare anyway")
        t_ms = round(man["t_read"] * 1e3, 6)

        def score(rec):
            s, f = rec["subject"], rec["frame"]
            tpath, xpath = ds.path(s, f, "truth.cimg"), rdir / rec["file"]
            for p in (tpath, xpath):
                if not p.is_file():
                    raise CliError(f"missing counterpart frame {p}")
            truth, x = read_cimg(tpath).astype(np.complex128), read_cimg(xpath).astype(np.complex128)
            return (s, f, t_ms, man["method"], psnr(x, truth), ssim(x, truth), hfen(x, truth)), x

        scored = _parallel_map(score, man["frames"], threads)
        rows.extend(r for r, _ in scored)
        if args.profile_subject is not None:
            for (row, x) in scored:
                if row[0] == args.profile_subject:
                    series.setdefault((man["method"], man["protocol"]), []).append((row[1], x))
    if not rows:
        raise CliError("no frames to evaluate")
    rows.sort(key=lambda r: (r[3], r[2], r[0], r[1]))
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject", "frame", "t_read_ms", "method", "psnr_db", "ssim", "hfen"])
        for s, f, t_ms, m, p, q, h in rows:
            w.writerow([s, f, repr(t_ms), m, repr(p), repr(q), repr(h)])

    groups = {}
    for r in rows:
        groups.setdefault((r[3], r[2]), []).append(r)
    lines = [["method", "t_read_ms", "n", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std",
              "hfen_mean", "hfen_std"]]
    for (m, t_ms), grp in sorted(groups.items()):
        stats = [aggregate([g[i] for g in grp]) for i in (4, 5, 6)]
        lines.append([m, repr(t_ms), len(grp)] + [repr(v) for st in stats for v in st])
    with open(out / "summary.csv", "w", newline="") as fh:
        csv.writer(fh).writerows(lines)

    if args.profile_subject is not None:
        s = args.profile_subject
        truth = [(f, ds.truth(s, f)) for f in range(ds.manifest["n_frames"])]
        series[("truth", "")] = truth
        for (m, p), frames in sorted(series.items()):
            frames.sort(key=lambda t: t[0])
            prof = np.array([_profile(x, args.profile_axis, args.profile_index) for _, x in frames])
            name = f"profile_s{s:03d}_{m}" + (f"_{p}" if p else "") + ".csv"
            np.savetxt(out / name, prof, delimiter=",", fmt="%.9g")

    print(f"{'method':<8}{'t_read':>8}{'n':>5}  {'PSNR (dB)':>16}  {'SSIM':>16}  {'HFEN':>16}")
    for row in lines[1:]:
        m, t_ms, n, pm, ps, sm, ss, hm, hs = row
        print(f"{m:<8}{float(t_ms):>8.3f}{n:>5}  {float(pm):>8.2f} +- {float(ps):<5.2f}  "
              f"{float(sm):>8.4f} +- {float(ss):<5.3f}  {float(hm):>8.4f} +- {float(hs):<5.3f}")


def _profile(img, axis, index):
    mag = np.abs(img)
    if index is None:
        index = mag.shape[0 if axis == "row" else 1] // 2
    return mag[index, :] if axis == "row" else mag[:, index]


def cmd_bench(args, cfg: RunConfig, threads: int):
    from threadpoolctl import threadpool_limits

    n = args.frames if args.frames is not None else cfg.bench.n_frames
    if n < 1:
        raise CliError("--frames must be >= 1", EXIT_USAGE)
    if args.method == "cnn":
        if not args.model:
            raise CliError("bench --method cnn requires --model", EXIT_USAGE)
        model = read_model(args.model)
    if args.data:
        ds = DatasetDir(args.data)
        proto = ds.protocol(args.protocol)
        pool = ds.frames(args.split)[:max(1, min(n, 20))]
        inputs = [(ds.kspace(s, f, proto.name), ds.fieldmap(s, f)) for s, f in pool]
    elif args.method == "ir":
        raise CliError("bench --method ir requires --data (k-space and field maps)", EXIT_USAGE)
    else:
        proto = None
        seq = make_phantom_sequence(PhantomParams(matrix=cfg.trajectory.matrix, n_frames=4))
        inputs = [(img, None) for img, _ in seq]
    cg = CgConfig(max_iters=cfg.ir.max_iters, tol=cfg.ir.tol, lam=cfg.ir.lam)

    def once(i):
        data, fmap = inputs[i % len(inputs)]
        t0 = time.perf_counter()
        if args.method == "cnn":
            grid = data if proto is None else nufft_adjoint(data, proto.plan, proto.density)
            norm, scale = normalize_frame(grid)
            from_channels(forward(model, to_channels(norm))) * scale
        else:
            ir_deblur(data, fmap, proto.traj, proto.plan, cg)
        return (time.perf_counter() - t0) * 1e3

    with threadpool_limits(1):
        for i in range(cfg.bench.warmup):
            once(i)
        samples = np.array([once(i) for i in range(n)])
    report = {"mean_ms": float(samples.mean()), "std_ms": float(samples.std()), "n": int(n)}
    text = json.dumps(report, sort_keys=True)
    if args.out:
        atomic_write(args.out, (text + "\n").encode())
    print(text)


# ---------------------------------------------------------------- entry point


def _parse_set(items):
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise CliError(f"--set expects section.key=value, got {item!r}", EXIT_USAGE)
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON (defaults when omitted)")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (JSON literal); repeatable")
    common.add_argument("--threads", type=int, help=f"worker threads (env {THREADS_ENV} wins)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="spiral-deblur", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=version_string())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="simulate the synthetic dataset")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train the residual CNN")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path (.modl)")
    p.add_argument("--log", help="training log CSV (default: checkpoint path with .csv)")
    p.add_argument("--epochs", type=int, help="shortcut for --set cnn.epochs=N")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("deblur", parents=[common], help="reconstruct frames with one method")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--data", required=True, help="dataset directory with k-space inputs")
    p.add_argument("--protocol", default="long")
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--fieldmaps", help="directory holding the field maps (usually the dataset)")
    p.add_argument("--model", help="CNN checkpoint")
    p.add_argument("--limit", type=int, help="process only the first N frames")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_deblur)

    p = sub.add_parser("evaluate", parents=[common], help="score results against ground truth")
    p.add_argument("--truth", required=True, help="dataset directory")
    p.add_argument("--results", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true",
                   help="compare results made under a different trajectory config")
    p.add_argument("--profile-subject", type=int)
    p.add_argument("--profile-axis", choices=("row", "col"), default="row")
    p.add_argument("--profile-index", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", parents=[common], help="single-threaded per-frame latency")
    p.add_argument("--method", choices=("cnn", "ir"), default="cnn")
    p.add_argument("--model")
    p.add_argument("--frames", type=int)
    p.add_argument("--data")
    p.add_argument("--protocol", default="long")
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        threads = resolve_threads(args.threads)
        try:
            cfg = load_config(args.config)
            overrides = _parse_set(args.set)
            if getattr(args, "epochs", None) is not None:
                overrides["cnn.epochs"] = args.epochs
            cfg = cfg.with_overrides(overrides)
        except (OSError, ValueError, TypeError) as exc:
            raise CliError(f"invalid config: {exc}", EXIT_USAGE) from None
        args.func(args, cfg, threads)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
