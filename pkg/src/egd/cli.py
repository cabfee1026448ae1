"""Command-line interface: ``egd <verb> ...``.

Every verb prints one machine-parsable summary line on stdout
(``key=value`` pairs, or a JSON object with ``--json``); diagnostics go to
stderr. Exit codes: 0 ok, 2 schema/usage, 3 I/O, 4 missing precondition,
5 numeric failure. ``EGD_SEED`` sets the default ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench, container, imgpipe, mltrain
from .bitcodec import (
    bit_entropy,
    decode_tabular,
    encode_tabular,
    load_schema,
    numeric_matrix,
    raw_size_bits,
    read_csv,
    write_csv,
)
from .exceptions import EGDError, NoCondensedData, SchemaMismatch
from .gede import SearchConfig, compress, compressed_size

log = logging.getLogger("egd")

EXIT_OK, EXIT_SCHEMA, EXIT_IO, EXIT_PRECONDITION, EXIT_NUMERIC = 0, 2, 3, 4, 5


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_SCHEMA)


def _default_seed() -> int:
    raw = os.environ.get("EGD_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise SchemaMismatch(f"EGD_SEED must be an integer, got {raw!r}") from None


def _emit(args, record: dict) -> None:
    # verbs that stream data to stdout put their summary on stderr
    stream = sys.stderr if record.pop("_summary_to_stderr", False) else sys.stdout
    if args.json:
        print(json.dumps(record, sort_keys=False, default=_jsonable), file=stream)
    else:
        print(" ".join(f"{k}={_fmt(v)}" for k, v in record.items()), file=stream)


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v))


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def _is_container(path: Path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(4) == container.MAGIC


def _load_csv(args, path):
    schema = load_schema(Path(args.schema).read_text()) if getattr(args, "schema", None) else None
    return read_csv(path, schema=schema, decimals=getattr(args, "decimals", False))


# -- verbs ------------------------------------------------------------------


def cmd_compress(args) -> dict:
    columns, schema = _load_csv(args, args.input)
    if args.target is not None and args.target not in columns:
        raise SchemaMismatch(f"unknown target column {args.target!r}")
    bm = encode_tabular(columns, schema)
    cfg = SearchConfig(beta=args.beta, tau=args.tau, condensed_mode=args.condensed.replace("-", "_"))
    cd = compress(bm, cfg, target=args.target)
    out = Path(args.out) if args.out else Path(args.input).with_suffix(".egd")
    nbytes = container.save(cd, out)
    raw = raw_size_bits(cd.n, schema)
    return {"out": str(out), "n": cd.n, "m": cd.m, "n_b": cd.n_b, "l_b": cd.l_b, "l_d": cd.l_d,
            "S": cd.best_size, "S_params": container.params_bits(cd), "raw_bits": raw,
            "ratio": cd.best_size / raw, "file_bytes": nbytes, "file_ratio": 8 * nbytes / raw}


def cmd_decompress(args) -> dict:
    if args.index is not None:
        with container.ContainerReader(args.input) as reader:
            rec = reader.read_many([args.index])
            schema, read = reader.header.schema, reader.bytes_read
    else:
        cd = container.load(args.input)
        bm = cd.decompress(include_condensed=args.include_condensed)
        rec, schema, read = decode_tabular(bm), cd.schema, Path(args.input).stat().st_size
    if args.out:
        write_csv(args.out, rec, schema)
    else:
        write_csv(sys.stdout, rec, schema)
    return {"rows": len(rec), "bytes_read": read, "out": args.out or "-", "_summary_to_stderr": not args.out}


def cmd_stats(args) -> dict:
    cd = container.load(args.input, verify=not args.no_verify)
    recomputed = compressed_size(cd.n_b, cd.l_b, cd.l_d, cd.n, cd.m)
    raw = raw_size_bits(cd.n, cd.schema)
    return {"n": cd.n, "m": cd.m, "n_b": cd.n_b, "l_t": cd.l_t, "l_b": cd.l_b, "l_d": cd.l_d,
            "beta": cd.beta, "tau": cd.tau, "condensed": cd.condensed_mode, "target": cd.target or "",
            "S": cd.best_size, "S_recomputed": recomputed, "consistent": recomputed == cd.best_size,
            "S_params": container.params_bits(cd), "raw_bits": raw, "ratio": cd.best_size / raw,
            "file_bytes": Path(args.input).stat().st_size}


def cmd_entropy(args) -> dict:
    path = Path(args.input)
    if _is_container(path):
        bm = container.load(path).decompress()
    else:
        columns, schema = _load_csv(args, path)
        bm = encode_tabular(columns, schema)
    prof = bit_entropy(bm)
    starts = bm.column_starts
    cols = []
    for j, col in enumerate(bm.schema):
        h = prof.h[starts[j]:starts[j] + col.bit_width]
        cols.append({"column": col.name, "kind": col.kind, "bits": col.bit_width,
                     "constant": int(prof.constant_mask[starts[j]:starts[j] + col.bit_width].sum()),
                     "mean_h": float(h.mean()), "max_h": float(h.max())})
    if not args.json:
        for c in cols:
            print(f"column={c['column']} kind={c['kind']} bits={c['bits']} constant={c['constant']} "
                  f"mean_h={c['mean_h']:.4f} max_h={c['max_h']:.4f}", file=sys.stderr)
    record = {"n": bm.n, "l_t": bm.l_t, "constant_bits": int(prof.constant_mask.sum()),
              "total_entropy": float(prof.h.sum())}
    if args.json:
        record["columns"] = cols
        if args.bits:
            record["h"] = prof.h.round(6).tolist()
    return record


def _split_arg(value: str):
    if value.startswith("split:"):
        frac = float(value.split(":", 1)[1])
        if not 0 < frac < 1:
            raise SchemaMismatch("--test split fraction must be in (0, 1)")
        return frac
    return None


def _xy(records, target, features=None):
    names = [n for n in records.dtype.names if n != target] if features is None else features
    return numeric_matrix(records, names), numeric_matrix(records, [target])[:, 0], names


_REPORT_DETAIL = ("loss_curve", "theta", "standardize_mean", "standardize_scale")


def cmd_train(args) -> dict:
    path = Path(args.input)
    is_cont = _is_container(path)
    target = args.target
    cond = None
    train_rec = None
    if is_cont:
        with container.ContainerReader(path) as reader:
            target = target or reader.header.target
            mode = reader.header.condensed_mode
            if args.mode in ("condensed", "both"):
                if mode == "stored":
                    cond = reader.condensed()
                elif mode == "none":
                    raise NoCondensedData("container was built with --condensed none")
        if args.mode in ("full", "both") or cond is None:
            cd = container.load(path)
            if cond is None and args.mode in ("condensed", "both"):
                cond = cd.get_condensed()
            if args.mode in ("full", "both"):
                train_rec = decode_tabular(cd.decompress())
    else:
        if args.mode != "full":
            raise NoCondensedData("condensed training needs a container with condensed data")
        columns, schema = _load_csv(args, path)
        train_rec = decode_tabular(encode_tabular(columns, schema))
    if target is None:
        raise SchemaMismatch("no target column: pass --target")

    test_frac = _split_arg(args.test) if args.test else None
    test_X = test_y = None
    if args.test and test_frac is None:
        tcols, tschema = read_csv(args.test)
        trec = decode_tabular(encode_tabular(tcols, tschema))
    elif test_frac is not None:
        if train_rec is None:
            raise NoCondensedData("--test split: needs the full data; use --mode full/both or a test CSV")
        perm = np.random.default_rng(args.seed).permutation(len(train_rec))
        k = int(round(len(train_rec) * (1 - test_frac)))
        trec, train_rec = train_rec[perm[k:]], train_rec[perm[:k]]
    else:
        trec = None

    cfg = mltrain.TrainConfig(learning_rate=args.lr, max_iters=args.max_iter, tol=args.tol,
                              standardize=args.standardize, seed=args.seed, record_every=args.record_every)
    fit = mltrain.train if args.model == "linreg" else mltrain.train_logistic
    record: dict = {"model": args.model, "mode": args.mode, "target": target}
    reports = {}
    features = None
    if train_rec is not None and args.mode in ("full", "both"):
        X, y, features = _xy(train_rec, target)
        reports["full"] = fit(X, y, cfg)
    if cond is not None:
        Xc, yc, w = cond.xy(target, features)
        features = features or [n for n in cond.samples.dtype.names if n != target]
        reports["condensed"] = fit(Xc, yc, cfg, weights=w)
        record["m"] = cond.m
    if trec is not None:
        test_X, test_y, _ = _xy(trec, target, features)
    for name, rep in reports.items():
        prefix = "" if len(reports) == 1 else f"{name}_"
        record.update({prefix + k: v for k, v in rep.to_dict().items() if k not in _REPORT_DETAIL})
        if test_X is not None:
            record.update({prefix + "test_" + k: v for k, v in mltrain.evaluate(rep.params, test_X, test_y).items()})
    if len(reports) == 2 and test_X is not None:
        record["mse_ratio"] = record["condensed_test_mse"] / record["full_test_mse"]
    if args.report:
        payload = {name: rep.to_dict() for name, rep in reports.items()}
        Path(args.report).write_text(json.dumps(payload, indent=1, default=_jsonable))
    return record


def cmd_sample(args) -> dict:
    spec = imgpipe.SampleSpec(fraction=args.fraction, seed=args.seed, epoch=args.epoch)
    sample = imgpipe.sample_epoch(args.archive, spec)
    if args.out:
        imgpipe.save_decoded(args.out, sample.images, sample.labels)
    total = imgpipe.archive_bytes(args.archive)
    return {"images": len(sample.labels), "classes": len(sample.indices), "bytes_read": sample.bytes_read,
            "archive_bytes": total, "read_fraction": sample.bytes_read / total, "out": args.out or ""}


def cmd_images(args) -> dict:
    if args.action == "compress":
        images, labels = imgpipe.load_images(args.input, args.labels)
        if args.limit_per_class:
            keep = np.concatenate([np.flatnonzero(labels == c)[:args.limit_per_class] for c in np.unique(labels)])
            keep.sort()
            images, labels = images[keep], labels[keep]
        cfg = SearchConfig(beta=0, tau=args.tau, condensed_mode="none")
        archive = imgpipe.compress_classwise(images, labels, cfg, use_dct=args.dct, jobs=args.jobs, seed=args.seed)
        archive.save(args.out)
        raw = int(images.size)
        total = imgpipe.archive_bytes(args.out)
        return {"out": args.out, "images": len(labels), "classes": len(archive.containers),
                "transform_chain": ",".join(archive.manifest.transform_chain) or "none",
                "S_bits": archive.size_bits(), "raw_bytes": raw, "archive_bytes": total,
                "ratio": total / raw}
    if args.action == "info":
        man = imgpipe.read_manifest(args.input)
        total = imgpipe.archive_bytes(args.input)
        return {"shape": list(man.shape), "classes": man.classes, "images": sum(man.counts.values()),
                "transform_chain": ",".join(man.transform_chain) or "none", "archive_bytes": total}
    # decode: full archive back to PPM/PGM files
    archive = imgpipe.ClasswiseArchive.load(args.input)
    ims, labs = [], []
    for c in archive.manifest.classes:
        dec = archive.decode_class(c)
        ims.append(dec)
        labs.append(np.full(len(dec), c))
    imgpipe.save_decoded(args.out, np.concatenate(ims), np.concatenate(labs))
    return {"out": args.out, "images": int(sum(len(x) for x in labs))}


def cmd_bench(args) -> dict:
    fn = bench.TASKS[args.task]
    kwargs = {"n": args.n, "d": args.d, "seed": args.seed}
    if args.task != "compress":
        kwargs["fraction"] = args.fraction
    return fn(**kwargs)


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="structured output")
    common.add_argument("--seed", type=int, default=None, help="default: $EGD_SEED or 0")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="egd", description="Entropy-guided deduplication: compress, inspect, train, sample.",
                parents=[common])
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    c = sub.add_parser("compress", parents=[common], help="CSV -> EGD1 container")
    c.add_argument("input")
    c.add_argument("--beta", type=int, default=8)
    c.add_argument("--tau", type=int, default=16)
    c.add_argument("--condensed", choices=["stored", "on-demand", "none"], default="stored")
    c.add_argument("--target")
    c.add_argument("--decimals", action="store_true", help="store exact short decimals as fixed-point")
    c.add_argument("--schema", help="sidecar schema file")
    c.add_argument("--out")
    c.set_defaults(func=cmd_compress)

    d = sub.add_parser("decompress", parents=[common], help="container -> CSV")
    d.add_argument("input")
    d.add_argument("--out")
    d.add_argument("--index", type=int, help="decode a single record by random access")
    d.add_argument("--include-condensed", action="store_true")
    d.set_defaults(func=cmd_decompress)

    s = sub.add_parser("stats", parents=[common], help="container counters and sizes")
    s.add_argument("input")
    s.add_argument("--no-verify", action="store_true")
    s.set_defaults(func=cmd_stats)

    e = sub.add_parser("entropy", parents=[common], help="per-bit entropy of a CSV or container")
    e.add_argument("input")
    e.add_argument("--decimals", action="store_true")
    e.add_argument("--schema")
    e.add_argument("--bits", action="store_true", help="include every bit's entropy (with --json)")
    e.set_defaults(func=cmd_entropy)

    t = sub.add_parser("train", parents=[common], help="train on full or condensed data")
    t.add_argument("input")
    t.add_argument("--model", choices=["linreg", "logreg"], default="linreg")
    t.add_argument("--mode", choices=["full", "condensed", "both"], default="full")
    t.add_argument("--target")
    t.add_argument("--lr", type=float, default=0.001)
    t.add_argument("--tol", type=float, default=1e-8)
    t.add_argument("--max-iter", type=int)
    t.add_argument("--standardize", action="store_true")
    t.add_argument("--record-every", type=int, default=100)
    t.add_argument("--test", help="test CSV path or split:<fraction>")
    t.add_argument("--decimals", action="store_true")
    t.add_argument("--schema")
    t.add_argument("--report", help="write the full training report(s) as JSON")
    t.set_defaults(func=cmd_train)

    sa = sub.add_parser("sample", parents=[common], help="decode a random subset of an image archive")
    sa.add_argument("archive")
    sa.add_argument("--fraction", type=float, default=0.1)
    sa.add_argument("--epoch", type=int, default=0)
    sa.add_argument("--out")
    sa.set_defaults(func=cmd_sample)

    im = sub.add_parser("images", parents=[common], help="class-wise image archives")
    im.add_argument("action", choices=["compress", "info", "decode"])
    im.add_argument("input", help="IDX image file or PPM/PGM directory (compress); archive dir otherwise")
    im.add_argument("--labels", help="IDX labels file")
    im.add_argument("--out")
    im.add_argument("--dct", action="store_true", help="YCbCr (colour) + whole-channel DCT")
    im.add_argument("--tau", type=int, default=16)
    im.add_argument("--jobs", type=int, default=1)
    im.add_argument("--limit-per-class", type=int)
    im.set_defaults(func=cmd_images)

    b = sub.add_parser("bench", parents=[common], help="full vs condensed timing")
    b.add_argument("--task", choices=sorted(bench.TASKS), default="gd-iter")
    b.add_argument("--n", type=int, default=100_000)
    b.add_argument("--d", type=int, default=8)
    b.add_argument("--fraction", type=float, default=0.05)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is None:
            args.seed = _default_seed()
        if args.verb == "images" and args.action in ("compress", "decode") and not args.out:
            raise SchemaMismatch("images compress/decode need --out")
        record = args.func(args)
    except EGDError as exc:
        print(f"egd: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, EOFError) as exc:
        print(f"egd: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        print(f"egd: invalid input: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"egd: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _emit(args, record)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
