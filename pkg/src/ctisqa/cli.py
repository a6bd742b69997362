"""Command-line entry point: ``ctisqa <subcommand> ...``.

Data goes to files (or standard output for ``score``/``stats``/``gradcheck``
without ``--out``); log records go to standard error as JSON lines. Every run
writes a manifest with input/output checksums, the seed, the package version
and timings. The exit status is 0 exactly when no error record was logged.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, _kernels
from .errors import CtisError

log = logging.getLogger("ctisqa")

THREAD_ENV = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
              "NUMBA_NUM_THREADS", "VECLIB_MAXIMUM_THREADS")


class StrictAbort(Exception):
    """Raised after the first isolated error when ``--strict`` is set."""


# logging ---------------------------------------------------------------------

class JsonFormatter(logging.Formatter):
    def format(self, record):
        rec = {"level": record.levelname.lower(), "event": record.getMessage()}
        rec.update(getattr(record, "fields", {}))
        return json.dumps(rec, ensure_ascii=False, default=str)


class ErrorCounter(logging.Handler):
    def __init__(self):
        super().__init__(level=logging.ERROR)
        self.count = 0

    def emit(self, record):
        self.count += 1


def emit(level, event, **fields):
    log.log(level, event, extra={"fields": fields})


def setup_logging(quiet: bool) -> ErrorCounter:
    log.handlers.clear()
    log.propagate = False
    log.setLevel(logging.INFO)
    stream = logging.StreamHandler(sys.stderr)
    stream.setFormatter(JsonFormatter())
    stream.setLevel(logging.WARNING if quiet else logging.INFO)
    counter = ErrorCounter()
    log.addHandler(stream)
    log.addHandler(counter)
    return counter


# run manifest ----------------------------------------------------------------

class Run:
    """Collects inputs, outputs and timings for the run manifest."""

    def __init__(self, args):
        self.args = args
        self.inputs, self.outputs, self.timings, self.info = [], [], {}, {}
        self.started = datetime.now(timezone.utc).isoformat(timespec="seconds")
        self.t0 = time.perf_counter()
        self.strict = getattr(args, "strict", False)

    def input(self, path):
        if path is not None:
            self.inputs.append(str(path))

    def output(self, path):
        if path is not None:
            self.outputs.append(str(path))

    def isolated_error(self, exc, **where):
        """Log a per-item failure; re-raise under ``--strict``."""
        emit(logging.ERROR, "item_failed", error=type(exc).__name__, message=str(exc), **where)
        if self.strict:
            raise StrictAbort(str(exc)) from exc

    def manifest(self, n_errors: int) -> dict:
        from .features import file_checksum, format_checksum

        def entries(paths):
            out = []
            for p in paths:
                rec = {"path": p}
                if os.path.isfile(p):
                    rec["bytes"] = os.path.getsize(p)
                    rec["checksum"] = format_checksum(file_checksum(p))
                out.append(rec)
            return out

        config = {k: v for k, v in vars(self.args).items() if k not in ("func",)}
        return {
            "tool": "ctisqa",
            "version": __version__,
            "command": self.args.command,
            "seed": getattr(self.args, "seed", None),
            "backend": _kernels.BACKEND,
            "config": config,
            "inputs": entries(self.inputs),
            "outputs": entries(self.outputs),
            "info": self.info,
            "timings": {**self.timings, "total_s": time.perf_counter() - self.t0},
            "started_at": self.started,
            "n_errors": n_errors,
        }


def manifest_path(args) -> Path:
    if args.run_manifest:
        return Path(args.run_manifest)
    out = getattr(args, "out", None)
    if out:
        out = Path(out)
        if args.command == "encode" or (args.command == "synth" and args.kind == "slides"):
            return out / "run_manifest.json"
        return out.with_name(out.name + ".manifest.json")
    return Path(f"ctisqa-{args.command}.manifest.json")


# shared helpers --------------------------------------------------------------

def _schema(args, run):
    from .cprt import load_schema
    run.input(args.schema)
    return load_schema(args.schema)


def _header(args, schema=None, **extra):
    from .io import make_header
    fields = {"seed": args.seed}
    if schema is not None:
        fields["schema_checksum"] = schema.checksum
    fields.update(extra)
    return make_header(**fields)


def _write_text(path, text: str):
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def _slide_map(reports_path, run) -> dict | None:
    if not reports_path:
        return None
    from .cprt import read_reports
    run.input(reports_path)
    return {r.case_id: list(r.slide_ids) for r in read_reports(reports_path)}


def _subset_features(features, split_path, subset, slide_map, run):
    """Keep the features of cases whose slides fall in ``subset``."""
    if not split_path:
        return features
    run.input(split_path)
    assignment = json.loads(Path(split_path).read_text(encoding="utf-8"))["assignment"]
    keep = set()
    for f in features:
        slides = (slide_map or {}).get(f.case_id) or [f.case_id]
        if any(assignment.get(s) == subset for s in slides):
            keep.add(f.case_id)
    return [f for f in features if f.case_id in keep]


def _chat_client(args):
    from .remote import ChatClient
    if not args.endpoint or not args.model:
        raise SystemExit("--endpoint and --model are required for the remote backend")
    return ChatClient(args.endpoint, args.model, timeout=args.timeout)


def apply_threads(threads: int):
    from threadpoolctl import threadpool_limits
    threadpool_limits(limits=threads)
    _kernels.set_threads(threads)


# synth -----------------------------------------------------------------------

def cmd_synth(args, run):
    if args.kind == "slides":
        from .features import save_slides, synth_slide
        slides = [synth_slide(args.seed + i, args.n_patches, args.dim, args.n_modes,
                              slide_id=f"{args.prefix}{i:04d}", with_coords=True)
                  for i in range(args.count)]
        manifest = save_slides(slides, args.out)
        for e in manifest.entries:
            run.output(Path(args.out) / e.path)
        run.output(Path(args.out) / "manifest.jsonl")
        emit(logging.INFO, "synth_slides", n=len(slides), out=str(args.out))
        return
    from .cprt import ExtractedFeature, synth_corpus, write_feature_file, write_reports
    schema = _schema(args, run)
    kwargs = {"n_slides": args.count} if args.count_slides else {"n_cases": args.count}
    cases = synth_corpus(schema, args.seed, multi_slide_rate=args.multi_slide_rate, **kwargs)
    write_reports(args.out, [c.report for c in cases], _header(args, schema))
    run.output(args.out)
    if args.gold:
        gold = [ExtractedFeature(c.report.case_id, el.key, c.gold.get(el.key),
                                 "verified" if el.key in c.gold else "absent", "gold")
                for c in cases for el in schema.elements]
        write_feature_file(args.gold, gold, _header(args, schema, extractor="gold"))
        run.output(args.gold)
    emit(logging.INFO, "synth_reports", n_cases=len(cases),
         n_slides=sum(len(c.report.slide_ids) for c in cases))


# encode ----------------------------------------------------------------------

_WORKER = {}


def _init_worker(cfg, ppm, fusion, threads):
    apply_threads(threads)
    _WORKER.update(cfg=cfg, ppm=ppm, fusion=fusion)


def _encode_one(task):
    """Encode one slide file; returns ``(slide_id, facts, error)``."""
    from .encode import encode_slide
    from .features import read_features
    from .fusion import save_tokens
    slide_id, src, dst = task
    try:
        m = read_features(src)
        if m.slide_id and m.slide_id != slide_id:
            raise ValueError(f"container holds slide {m.slide_id!r}, manifest says {slide_id!r}")
        m.slide_id = slide_id
        seq, facts = encode_slide(m, _WORKER["cfg"], _WORKER["ppm"], _WORKER["fusion"])
        save_tokens(seq, dst, slide_id)
        return slide_id, facts, None
    except (CtisError, ValueError, OSError) as exc:
        return slide_id, None, (type(exc).__name__, str(exc))


def cmd_encode(args, run):
    from .encode import EncodeConfig, default_params
    from .features import read_manifest
    from .fusion import load_fusion_params
    from .ppm import load_params

    cfg = EncodeConfig(n_clusters=args.n_clusters, m_max=args.m_max, n_segments=args.n_segments,
                       l_queries=args.l_queries, d_out=args.d_out, seed=args.seed,
                       n_restarts=args.restarts, max_iters=args.max_iters)
    run.input(args.manifest)
    manifest = read_manifest(args.manifest)
    base = Path(args.manifest).parent
    if not manifest.entries:
        emit(logging.WARNING, "empty_manifest", manifest=str(args.manifest))
        return
    dim = manifest.entries[0].dim
    ppm, fusion = default_params(cfg, dim)
    if args.ppm_params:
        run.input(args.ppm_params)
        ppm = load_params(args.ppm_params)
    if args.fusion_params:
        run.input(args.fusion_params)
        fusion = load_fusion_params(args.fusion_params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tasks = []
    for e in manifest.entries:
        src = manifest.resolve(e, base)
        run.input(src)
        tasks.append((e.slide_id, str(src), str(out / f"{e.slide_id}.tokens")))

    if args.workers > 1:
        import multiprocessing as mp
        # children must start with single-threaded BLAS/numba pools
        for var in THREAD_ENV:
            os.environ[var] = str(args.threads)
        pool = ProcessPoolExecutor(max_workers=args.workers, mp_context=mp.get_context("spawn"),
                                   initializer=_init_worker,
                                   initargs=(cfg, ppm, fusion, args.threads))
        results = pool.map(_encode_one, tasks)
    else:
        pool = None
        _init_worker(cfg, ppm, fusion, args.threads)
        results = map(_encode_one, tasks)

    slides = {}
    try:
        for slide_id, facts, err in results:
            if err is not None:
                run.isolated_error(CtisError(f"{err[0]}: {err[1]}"), slide_id=slide_id)
                continue
            timings = facts.pop("timings")
            run.timings[slide_id] = timings
            slides[slide_id] = facts
            run.output(out / f"{slide_id}.tokens")
            emit(logging.INFO, "encoded", slide_id=slide_id, **{k: round(v, 4) for k, v in timings.items()})
    finally:
        if pool is not None:
            pool.shutdown(cancel_futures=True)
    # per-slide facts without timings, so reruns are byte-identical
    from .io import write_jsonl
    write_jsonl(out / "slides.jsonl", [slides[s] for s in sorted(slides)],
                _header(args, config=cfg.to_json()))
    run.output(out / "slides.jsonl")
    run.info["encode_config"] = cfg.to_json()
    run.info["n_encoded"] = len(slides)


# extract / verify ------------------------------------------------------------

def _extractor(args, schema):
    from .cprt import OfflineExtractor, RemoteExtractor
    if args.extractor == "offline":
        return OfflineExtractor(schema)
    if not args.endpoint or not args.model:
        raise SystemExit("--endpoint and --model are required for --extractor remote")
    return RemoteExtractor(args.endpoint, args.model, timeout=args.timeout)


def cmd_extract(args, run):
    from .cprt import extract, read_reports, write_feature_file
    schema = _schema(args, run)
    run.input(args.reports)
    reports = read_reports(args.reports)
    ex = _extractor(args, schema)
    feats = []
    for r in reports:
        try:
            feats.extend(extract(r, schema, ex))
        except CtisError as exc:
            run.isolated_error(exc, case_id=r.case_id)
    write_feature_file(args.out, feats, _header(args, schema, extractor=ex.name))
    run.output(args.out)
    n_present = sum(f.present for f in feats)
    run.info.update(n_reports=len(reports), n_features=len(feats), n_present=n_present)
    emit(logging.INFO, "extracted", n_reports=len(reports), n_present=n_present)


def cmd_verify(args, run):
    from .cprt import (group_by_case, read_feature_file, read_reports, self_verify,
                       spot_check_export, spot_check_import, write_feature_file)
    schema = _schema(args, run)
    run.input(args.features)
    _, feats = read_feature_file(args.features)
    if args.import_review:
        run.input(args.import_review)
        out = spot_check_import(feats, args.import_review, schema)
    else:
        if not args.reports:
            raise SystemExit("--reports is required unless --import-review is given")
        run.input(args.reports)
        reports = {r.case_id: r for r in read_reports(args.reports)}
        ex = _extractor(args, schema)
        out = []
        for case_id, group in group_by_case(feats).items():
            report = reports.get(case_id)
            try:
                if report is None:
                    raise CtisError(f"no report for case {case_id}")
                out.extend(self_verify(group, report, schema, ex))
            except CtisError as exc:
                run.isolated_error(exc, case_id=case_id)
                out.extend(group)
    write_feature_file(args.out, out, _header(args, schema))
    run.output(args.out)
    counts = {}
    for f in out:
        counts[f.status] = counts.get(f.status, 0) + 1
    run.info["status_counts"] = counts
    emit(logging.INFO, "verified", **counts)
    if args.export_review:
        n = spot_check_export(out, args.sample_size, args.seed, args.export_review)
        run.output(args.export_review)
        emit(logging.INFO, "review_exported", rows=n, path=str(args.export_review))


# split / builders ------------------------------------------------------------

def cmd_split(args, run):
    from .cprt import read_feature_file
    from .datasets import split_slides
    from .io import write_json
    schema = _schema(args, run)
    run.input(args.features)
    _, feats = read_feature_file(args.features)
    slide_map = _slide_map(args.reports, run)
    targets = tuple(int(t) for t in args.targets.split(","))
    res = split_slides(feats, slide_map, targets, seed=args.seed, primary_key=args.primary_key,
                       schema=schema, scale=args.scale, ceiling=args.ceiling)
    write_json(args.out, res.to_json())
    run.output(args.out)
    run.info.update(counts=res.counts(), max_divergence=res.max_divergence)
    level = logging.WARNING if res.best_effort else logging.INFO
    emit(level, "split", counts=res.counts(), objective=res.objective,
         max_divergence=res.max_divergence, best_effort=res.best_effort)


def cmd_build_align(args, run):
    from .cprt import read_feature_file
    from .datasets import RemoteRealizer, TemplateRealizer, build_align
    from .io import write_jsonl
    schema = _schema(args, run)
    run.input(args.features)
    _, feats = read_feature_file(args.features)
    feats = _subset_features(feats, args.split, args.subset, _slide_map(args.reports, run), run)
    realizer = TemplateRealizer() if args.realizer == "template" else RemoteRealizer(_chat_client(args))
    res = build_align(feats, schema, realizer, args.seed, args.samples_per_case)
    write_jsonl(args.out, [s.to_json() for s in res.samples],
                _header(args, schema, realizer=realizer.name))
    run.output(args.out)
    for s in res.skipped:
        emit(logging.INFO, "case_skipped", **s)
    for f in res.failed:
        emit(logging.WARNING, "sample_failed", **f)
    run.info.update(n_samples=len(res.samples), n_skipped=len(res.skipped),
                    n_failed=len(res.failed))
    emit(logging.INFO, "built_align", n_samples=len(res.samples))


def cmd_build_bench(args, run):
    from .cprt import read_feature_file
    from .datasets import build_bench, load_question_bank
    from .io import write_jsonl
    schema = _schema(args, run)
    run.input(args.features)
    _, feats = read_feature_file(args.features)
    slide_map = _slide_map(args.reports, run)
    feats = _subset_features(feats, args.split, args.subset, slide_map, run)
    run.input(args.question_bank)
    bank = load_question_bank(args.question_bank)
    pairs = build_bench(feats, bank, schema, slide_map)
    if not pairs:
        emit(logging.WARNING, "empty_bench", features=str(args.features))
    write_jsonl(args.out, [p.to_json() for p in pairs], _header(args, schema))
    run.output(args.out)
    run.info["n_pairs"] = len(pairs)
    emit(logging.INFO, "built_bench", n_pairs=len(pairs))


# score / stats / gradcheck ---------------------------------------------------

def cmd_score(args, run):
    from .metrics import score_run
    run.input(args.predictions)
    run.input(args.bench)
    rep = score_run(args.predictions, args.bench, args.text_scope, args.sentence_level)
    if rep.n_missing:
        emit(logging.WARNING, "missing_predictions", n_missing=rep.n_missing)
    text = rep.table() if args.table else json.dumps(rep.to_json(), indent=2) + "\n"
    _write_text(args.out, text)
    run.output(args.out)
    run.info["score"] = rep.to_json()


def cmd_stats(args, run):
    from .datasets import dataset_stats
    from .io import read_jsonl
    run.input(args.input)
    _, recs = read_jsonl(args.input)
    stats = dataset_stats(recs, args.n_slides)
    _write_text(args.out, json.dumps(stats, indent=2) + "\n")
    run.output(args.out)
    run.info["total"] = stats["total"]


def cmd_gradcheck(args, run):
    from .ppm import grad_check
    dims = tuple(int(v) for v in args.dims.split(","))
    rep = grad_check(seeds=range(args.seed, args.seed + args.n_seeds), dims=dims,
                     h=args.step, threshold=args.threshold, perturb=args.perturb)
    _write_text(args.out, rep.to_json() + "\n")
    run.output(args.out)
    run.info["gradcheck"] = json.loads(rep.to_json())
    if not rep.passed:
        emit(logging.ERROR, "gradcheck_failed", max_rel_error=rep.max_rel_error,
             threshold=rep.threshold)


# parser ----------------------------------------------------------------------

def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _seed(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_seed, default=0)
    common.add_argument("--strict", action="store_true", help="fail fast on the first per-item error")
    common.add_argument("--threads", type=_positive, default=1, help="BLAS/numba threads per process")
    common.add_argument("--run-manifest", help="where to write the run manifest")
    common.add_argument("--quiet", action="store_true", help="log warnings and errors only")

    schema = argparse.ArgumentParser(add_help=False)
    schema.add_argument("--schema", help="template schema JSON (default: bundled)")

    remote = argparse.ArgumentParser(add_help=False)
    remote.add_argument("--endpoint", help="chat-completion URL for remote backends")
    remote.add_argument("--model", help="model name sent to the endpoint")
    remote.add_argument("--timeout", type=float, default=60.0)

    subset = argparse.ArgumentParser(add_help=False)
    subset.add_argument("--reports", help="report corpus, for the case to slide mapping")
    subset.add_argument("--split", help="split JSON written by 'ctisqa split'")
    subset.add_argument("--subset", choices=("train", "val", "test"), default="train")

    p = argparse.ArgumentParser(prog="ctisqa", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"ctisqa {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common, schema], help="synthetic slides or reports")
    s.add_argument("kind", choices=("slides", "reports"))
    s.add_argument("--out", required=True, help="directory (slides) or JSONL file (reports)")
    s.add_argument("--count", type=_positive, default=1, help="slides, or cases for reports")
    s.add_argument("--count-slides", action="store_true",
                   help="for reports, --count is the number of slides instead of cases")
    s.add_argument("--multi-slide-rate", type=float, default=0.0)
    s.add_argument("--gold", help="also write gold features here (reports)")
    s.add_argument("--n-patches", type=_positive, default=2000)
    s.add_argument("--dim", type=_positive, default=1024)
    s.add_argument("--n-modes", type=_positive, default=16)
    s.add_argument("--prefix", default="slide-")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("encode", parents=[common], help="dual-stream slide encoding")
    s.add_argument("--manifest", required=True, help="slide manifest (manifest.jsonl)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--n-clusters", type=_positive, default=16)
    s.add_argument("--m-max", type=_positive, default=4096)
    s.add_argument("--n-segments", type=_positive, default=8)
    s.add_argument("--l-queries", type=_positive, default=32)
    s.add_argument("--d-out", type=_positive, default=4096)
    s.add_argument("--restarts", type=_positive, default=4)
    s.add_argument("--max-iters", type=_positive, default=100)
    s.add_argument("--ppm-params", help="PPM weights container (default: seeded init)")
    s.add_argument("--fusion-params", help="fusion weights container (default: seeded init)")
    s.add_argument("--workers", type=_positive, default=1)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("extract", parents=[common, schema, remote], help="report to template features")
    s.add_argument("--reports", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--extractor", choices=("offline", "remote"), default="offline")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("verify", parents=[common, schema, remote],
                       help="self-verification and pathologist spot checks")
    s.add_argument("--features", required=True)
    s.add_argument("--reports")
    s.add_argument("--out", required=True)
    s.add_argument("--extractor", choices=("offline", "remote"), default="offline")
    s.add_argument("--export-review", help="write a spot-check TSV after verification")
    s.add_argument("--sample-size", type=int, default=20, help="cases in the spot-check sample")
    s.add_argument("--import-review", help="merge a completed spot-check TSV instead of verifying")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("split", parents=[common, schema], help="stratified train/val/test split")
    s.add_argument("--features", required=True)
    s.add_argument("--reports", help="report corpus, for the case to slide mapping")
    s.add_argument("--out", required=True)
    s.add_argument("--targets", default="804,87,86", help="train,val,test slide counts")
    s.add_argument("--scale", action="store_true", help="rescale targets to the corpus size")
    s.add_argument("--ceiling", type=float, help="warn when any TV divergence exceeds this")
    s.add_argument("--primary-key", default="histologic_type")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("build-align", parents=[common, schema, remote, subset],
                       help="feature-description alignment samples")
    s.add_argument("--features", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--samples-per-case", type=int, default=100)
    s.add_argument("--realizer", choices=("template", "remote"), default="template")
    s.set_defaults(func=cmd_build_align)

    s = sub.add_parser("build-bench", parents=[common, schema, subset], help="question-answer pairs")
    s.add_argument("--features", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--question-bank", help="question bank JSON (default: bundled)")
    s.set_defaults(func=cmd_build_bench)

    s = sub.add_parser("score", parents=[common], help="score predictions against a bench")
    s.add_argument("--predictions", required=True)
    s.add_argument("--bench", required=True)
    s.add_argument("--out")
    s.add_argument("--table", action="store_true", help="plain-text table instead of JSON")
    s.add_argument("--text-scope", choices=("open", "all"), default="open")
    s.add_argument("--sentence-level", action="store_true",
                   help="average BLEU per pair instead of corpus-level counts")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("gradcheck", parents=[common], help="PPM gradient check")
    s.add_argument("--n-seeds", type=_positive, default=20)
    s.add_argument("--dims", default="8,6,3", help="d,M,L")
    s.add_argument("--step", type=float, default=1e-5)
    s.add_argument("--threshold", type=float, default=1e-5)
    s.add_argument("--perturb", type=float, default=0.0, help="negative control offset")
    s.add_argument("--out")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("stats", parents=[common], help="bench or align statistics")
    s.add_argument("--input", required=True)
    s.add_argument("--n-slides", type=int, help="slide count for pairs per slide")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    counter = setup_logging(args.quiet)
    apply_threads(args.threads)
    run = Run(args)
    try:
        args.func(args, run)
    except StrictAbort:
        emit(logging.ERROR, "aborted", reason="--strict")
    except (CtisError, OSError, ValueError, KeyError) as exc:
        emit(logging.ERROR, "command_failed", command=args.command, error=type(exc).__name__,
             message=str(exc))
    path = manifest_path(args)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        n_err = counter.count
        path.write_text(json.dumps(run.manifest(n_err), indent=2, default=str) + "\n",
                        encoding="utf-8")
    except OSError as exc:
        emit(logging.ERROR, "manifest_failed", path=str(path), message=str(exc))
    return 0 if counter.count == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
