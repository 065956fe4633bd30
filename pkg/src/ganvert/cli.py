"""``ganvert`` command line.

Every artifact carries a manifest with the command, its non-output
arguments, the fully populated run config and the master seed.  JSON
artifacts hold the manifest inline; images and weight files get a
``<file>.json`` sidecar; directory outputs get ``manifest.json``.
``ganvert replay`` re-runs a manifest into a fresh directory and can check
the result byte for byte.

Exit status: 0 success, 1 usage error, 2 computation failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from . import harness, gradcheck as gc
from .config import RunConfig, RunConfigError
from .generator import init_weights, load_weights, save_weights
from .imageio import read_ppm, write_ppm
from .interpolation import InterpolationSpec, dense_codes, interpolate, off_subspace_certificate
from .inversion import (InversionResult, invert_dense_unregularized, invert_two_step,
                        latent_only)
from .segmentation import segment

OUTPUT_KEYS = ("out", "recon", "csv")
_INTERNAL = ("command", "run_config_doc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# --------------------------------------------------------------------------
# helpers

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def dumps(doc):
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps(doc))


def _sha256(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def _need_file(flag, path):
    if path is None:
        raise UsageError(f"{flag} is required")
    if not os.path.isfile(path):
        raise UsageError(f"{flag}: no such file {path!r}")
    return path


def _run_config(args):
    if args.run_config_doc is not None:
        rc = RunConfig.from_dict(args.run_config_doc)
    elif getattr(args, "config", None):
        _need_file("--config", args.config)
        rc = RunConfig.load(args.config)
    else:
        rc = RunConfig()
    if getattr(args, "seed", None) is not None:
        rc = rc.replace(seed=args.seed)
    return rc


def _bundle(args, rc):
    bundle = load_weights(_need_file("--weights", args.weights))
    # the weight file is authoritative for the architecture
    return bundle, rc.replace(generator=bundle.config.to_dict())


def _manifest(args, rc, **extra):
    kept = {k: v for k, v in vars(args).items()
            if k not in OUTPUT_KEYS and k not in _INTERNAL and k != "func"}
    outputs = {k: os.path.basename(os.path.normpath(getattr(args, k)))
               for k in OUTPUT_KEYS if getattr(args, k, None)}
    return {"tool": "ganvert", "version": __version__, "command": args.command, "args": kept,
            "outputs": outputs, "run_config": rc.to_dict(), "seed": rc.seed, **extra}


def _sidecar(path, args, rc, **extra):
    _write_json(path + ".json", _manifest(args, rc, artifact=os.path.basename(path),
                                          sha256=_sha256(path), **extra))


def _load_result(flag, path, bundle):
    with open(_need_file(flag, path), encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{flag}: not valid JSON ({exc})") from None
    try:
        return InversionResult.from_json_dict(doc, bundle)
    except (KeyError, TypeError) as exc:
        raise UsageError(f"{flag}: not an inversion result ({exc})") from None


def _report(args, doc):
    if args.out:
        _write_json(args.out, doc)
    else:
        sys.stdout.write(dumps(doc))


def _floats(flag, text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise UsageError(f"{flag}: empty list")
    return vals


# --------------------------------------------------------------------------
# subcommands

def cmd_init_weights(args):
    rc = _run_config(args)
    bundle = init_weights(rc.generator, rc.seed)
    save_weights(bundle, args.out)
    _sidecar(args.out, args, rc)
    return 0


def cmd_generate(args):
    rc = _run_config(args)
    bundle, rc = _bundle(args, rc)
    if args.code:
        res = _load_result("--code", args.code, bundle)
        image, _ = bundle.g2(res.code.h)
    else:
        image = harness.make_target(bundle, rc.seed, args.kind)
    write_ppm(args.out, image)
    _sidecar(args.out, args, rc)
    return 0


def cmd_invert(args):
    rc = _run_config(args)
    bundle, rc = _bundle(args, rc)
    target = read_ppm(_need_file("--target", args.target), bundle.config.image_shape)
    config = rc.inversion_config()
    run = {"latent": latent_only, "dense": invert_two_step,
           "dense-unreg": invert_dense_unregularized}[args.stage]
    res = run(target, bundle, config)
    _write_json(args.out, {**_manifest(args, rc), **res.to_json_dict()})
    if args.recon:
        image, _ = bundle.g2(res.code.h)
        write_ppm(args.recon, image)
        _sidecar(args.recon, args, rc)
    return 0


def cmd_interpolate(args):
    rc = _run_config(args)
    bundle, rc = _bundle(args, rc)
    if args.steps < 2:
        raise UsageError("--steps must be >= 2")
    a = _load_result("--a", args.a, bundle)
    if args.mode == "delta":
        spec = InterpolationSpec("delta", a.code.z, a.code.delta, args.steps)
    else:
        b = _load_result("--b", args.b, bundle)
        key = "z" if args.mode == "latent" else "h"
        spec = InterpolationSpec(args.mode, getattr(a.code, key), getattr(b.code, key), args.steps)
    frames = interpolate(spec, bundle)
    os.makedirs(args.out, exist_ok=True)
    names = [f"frame_{i:03d}.ppm" for i in range(len(frames))]
    for name, frame in zip(names, frames):
        write_ppm(os.path.join(args.out, name), frame)
    dist = off_subspace_certificate(dense_codes(spec, bundle), bundle)
    files = {n: _sha256(os.path.join(args.out, n)) for n in names}
    _write_json(os.path.join(args.out, "manifest.json"),
                _manifest(args, rc, mode=args.mode, alphas=spec.alphas(), off_subspace=dist,
                          files=files))
    return 0


def cmd_segment(args):
    rc = _run_config(args)
    bundle, rc = _bundle(args, rc)
    ks = []
    for tok in args.clusters.split(","):
        try:
            ks.append(int(tok))
        except ValueError:
            raise UsageError(f"--clusters: not an integer: {tok!r}") from None
    n = bundle.config.query_grid[0] * bundle.config.query_grid[1]
    bad = [k for k in ks if not 1 <= k <= n]
    if bad:
        raise UsageError(f"--clusters: values {bad} outside [1, {n}]")
    res = _load_result("--code", args.code, bundle)
    image, segs = segment(res.code.h, bundle, ks)
    os.makedirs(args.out, exist_ok=True)
    write_ppm(os.path.join(args.out, "source.ppm"), image)
    names = ["source.ppm"]
    for s in segs:
        write_ppm(os.path.join(args.out, f"segment_k{s.k}.ppm"), s.rendered)
        _write_json(os.path.join(args.out, f"labels_k{s.k}.json"),
                    {"k": s.k, "grid": list(s.grid), "labels": s.label_grid.tolist()})
        names += [f"segment_k{s.k}.ppm", f"labels_k{s.k}.json"]
    files = {n: _sha256(os.path.join(args.out, n)) for n in names}
    _write_json(os.path.join(args.out, "manifest.json"), _manifest(args, rc, clusters=ks, files=files))
    return 0


def cmd_gradcheck(args):
    rc = _run_config(args)
    results = gc.run_suite(rc.seed, args.trials)
    ok = all(r.passed for r in results)
    _report(args, {**_manifest(args, rc), "passed": ok, "cases": gc.suite_to_json(results)})
    return 0 if ok else 2


def cmd_gap(args):
    rc = _run_config(args)
    bundle, rc = _bundle(args, rc)
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    kinds = [k for k in args.kinds.split(",") if k]
    bad = [k for k in kinds if k not in harness.TARGET_KINDS]
    if bad or not kinds:
        raise UsageError(f"--kinds: unknown kinds {bad}; choose from {list(harness.TARGET_KINDS)}")
    report = harness.gap_experiment(bundle, args.n, kinds, rc.inversion_config(), seed0=rc.seed)
    _report(args, {**_manifest(args, rc), **report.to_json_dict()})
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="\n") as f:
            f.write(report.to_csv())
    return 0


def cmd_theorem2(args):
    rc = _run_config(args)
    bundle, rc = _bundle(args, rc)
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    trials = harness.theorem2_report(bundle, args.trials, seed0=rc.seed)
    ok = all(t.passed for t in trials)
    _report(args, {**_manifest(args, rc), "passed": ok, "trials": [vars(t) for t in trials]})
    return 0 if ok else 2


def cmd_sweep(args):
    rc = _run_config(args)
    bundle, rc = _bundle(args, rc)
    lambdas = _floats("--lambdas", args.lambdas)
    if any(v < 0 for v in lambdas):
        raise UsageError("--lambdas: values must be >= 0")
    rows = harness.lambda_sweep(bundle, args.target_seed, lambdas, rc.inversion_config(), args.kind)
    _report(args, {**_manifest(args, rc), "rows": harness.sweep_to_json(rows)})
    return 0


def cmd_replay(args):
    path = _need_file("manifest", args.manifest)
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise UsageError(f"manifest: not valid JSON ({exc})") from None
    if not isinstance(doc, dict) or doc.get("tool") != "ganvert" or doc.get("command") not in COMMANDS:
        raise UsageError("manifest: not a ganvert artifact")
    if os.path.isdir(args.out) and os.listdir(args.out):
        raise UsageError(f"--out: directory {args.out!r} is not empty")
    # originals sit next to the manifest, or one level up for directory outputs
    src_dir = os.path.dirname(os.path.abspath(path))
    if os.path.basename(path) == "manifest.json" and "files" in doc:
        src_dir = os.path.dirname(src_dir)
    os.makedirs(args.out, exist_ok=True)
    ns = argparse.Namespace(**doc["args"], command=doc["command"], run_config_doc=doc["run_config"])
    for key in OUTPUT_KEYS:
        setattr(ns, key, None)
    for key, base in doc["outputs"].items():
        setattr(ns, key, os.path.join(args.out, base))
    status = COMMANDS[doc["command"]](ns)
    if not args.check:
        return status
    mismatched = []
    for root, _, names in os.walk(args.out):
        for name in names:
            rel = os.path.relpath(os.path.join(root, name), args.out)
            old = os.path.join(src_dir, rel)
            if not os.path.isfile(old) or _sha256(old) != _sha256(os.path.join(args.out, rel)):
                mismatched.append(rel)
    for m in sorted(mismatched):
        print(f"replay: {m} differs from the original", file=sys.stderr)
    return 2 if mismatched else status


COMMANDS = {
    "init-weights": cmd_init_weights,
    "generate": cmd_generate,
    "invert": cmd_invert,
    "interpolate": cmd_interpolate,
    "segment": cmd_segment,
    "gradcheck": cmd_gradcheck,
    "gap": cmd_gap,
    "theorem2": cmd_theorem2,
    "sweep": cmd_sweep,
}


def build_parser():
    p = _Parser(prog="ganvert", description=__doc__.splitlines()[0], allow_abbrev=False)
    p.add_argument("--version", action="version", version=f"ganvert {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_, allow_abbrev=False)
        sp.add_argument("--config", help="run config JSON")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        return sp

    sp = add("init-weights", "write a seeded weight file")
    sp.add_argument("--out", required=True)

    sp = add("generate", "render a seeded target or a stored code")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--kind", choices=harness.TARGET_KINDS, default="generated")
    sp.add_argument("--code", help="inversion result JSON to render instead")
    sp.add_argument("--out", required=True)

    sp = add("invert", "invert a target image")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--target", required=True)
    sp.add_argument("--stage", choices=("latent", "dense", "dense-unreg"), default="dense")
    sp.add_argument("--out", required=True)
    sp.add_argument("--recon", help="also write the reconstruction")

    sp = add("interpolate", "render frames between two codes")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--mode", choices=("latent", "dense", "delta"), required=True)
    sp.add_argument("--a", required=True, help="first endpoint (inversion result JSON)")
    sp.add_argument("--b", help="second endpoint; unused in delta mode")
    sp.add_argument("--steps", type=int, default=8)
    sp.add_argument("--out", required=True, help="output directory")

    sp = add("segment", "cluster the attention map of a stored code")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--code", required=True)
    sp.add_argument("--clusters", default="8,20,40")
    sp.add_argument("--out", required=True, help="output directory")

    sp = add("gradcheck", "finite-difference checks of every primitive")
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--out")

    sp = add("gap", "latent vs dense error on seeded targets")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--n", type=int, default=20)
    sp.add_argument("--kinds", default="generated,delta_perturbed,composite")
    sp.add_argument("--out")
    sp.add_argument("--csv")

    sp = add("theorem2", "latent-prior vs constrained dense-fit equivalence checks")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--trials", type=int, default=10)
    sp.add_argument("--out")

    sp = add("sweep", "sparsity penalty sweep on one target")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--lambdas", default="0,0.001,0.01,0.1,1,10,1e6")
    sp.add_argument("--target-seed", type=int, default=0)
    sp.add_argument("--kind", choices=harness.TARGET_KINDS, default="delta_perturbed")
    sp.add_argument("--out")

    sp = sub.add_parser("replay", allow_abbrev=False, help="regenerate the artifacts described by a manifest")
    sp.add_argument("manifest")
    sp.add_argument("--out", required=True, help="directory for the regenerated artifacts")
    sp.add_argument("--check", action="store_true", help="exit 2 unless bytes match the originals")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.run_config_doc = None
        if args.command == "replay":
            return cmd_replay(args)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"ganvert: error: {exc}", file=sys.stderr)
        return 1
    except RunConfigError as exc:
        print(f"ganvert: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    except Exception as exc:  # computation failure; name the module it came from
        module = type(exc).__module__.removeprefix("ganvert.")
        cmd = getattr(locals().get("args"), "command", "?")
        print(f"ganvert {cmd}: {module}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
