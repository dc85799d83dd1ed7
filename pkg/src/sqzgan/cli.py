"""Command-line entry points.

Exit codes: 0 success, 1 verification or numeric failure, 2 usage/config
error. Every command honors the config's seed, and outputs are plain
files (reports, CSV, PPM, checkpoints) written atomically.
"""

import argparse
import os
import sys

import numpy as np

from . import analysis, backend, checkpoint, gradcheck, metrics, ppm
from .autodiff import Tensor
from .config import RunConfig
from .errors import ConfigError, NumericError
from .synthesis import BlockVariant, Generator, GeneratorConfig
from .training import ToyDatasetSpec, ema_generator, train

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

SAMPLE_GRID = 4


def _write_report(path, lines):
    if path:
        checkpoint.atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def cmd_verify(args) -> int:
    cfg = RunConfig.from_file(args.config)
    if cfg.variant is not BlockVariant.SKIP:
        raise ConfigError(
            "the equivalence theorem covers the skip-connection baseline; "
            f"this config selects variant={cfg.variant.value}. Use variant=skip.")
    if args.trials < 1:
        raise ConfigError(f"--trials must be >= 1, got {args.trials}")
    precision = args.precision or cfg.precision
    dtype = np.float64 if precision == "f64" else np.float32
    report = analysis.verify_equivalence(
        cfg.to_generator_config(), trials=args.trials, tol=args.tol,
        dtype=dtype, seed=cfg.seed)
    lines = report.lines() + report.kv_lines()
    print("\n".join(lines))
    _write_report(args.out, lines)
    return EXIT_OK if report.passed else EXIT_FAIL


def _square_block_lines(gcfg: GeneratorConfig, report) -> list:
    lines = ["per-block closed forms (blocks with c_in == c_out):"]
    chain = gcfg.resolutions()
    for prev, res in zip(chain, chain[1:]):
        cin, cout = gcfg.channel_map[prev], gcfg.channel_map[res]
        if cin != cout:
            continue
        skip = analysis.count_block_params(BlockVariant.SKIP, cout, gcfg.r)
        line = (f"  b{res} c={cout}: skip 18c^2 = {skip.enumerated}")
        if gcfg.variant is not BlockVariant.SKIP:
            block = analysis.count_block_params(gcfg.variant, cout, gcfg.r)
            line += f"; {gcfg.variant.value} enumerated {block.enumerated}"
            if block.predicted_formula is not None:
                line += (f", closed-form prediction {block.predicted_formula:.0f} "
                         f"(gap {block.formula_gap:+.0f})")
        lines.append(line)
    return lines


def cmd_params(args) -> int:
    cfg = RunConfig.from_file(args.config)
    gcfg = cfg.to_generator_config()
    report = analysis.count_generator_params(gcfg)
    base_cfg = GeneratorConfig(
        resolution=gcfg.resolution, channel_map=dict(gcfg.channel_map),
        variant=BlockVariant.SKIP, r=gcfg.r, style_dim=gcfg.style_dim,
        mapping_depth=gcfg.mapping_depth, upsample_mode=gcfg.upsample_mode)
    baseline = analysis.count_generator_params(base_cfg)
    thresholds = analysis.formula_thresholds()
    reduction = analysis.reduction_percent(baseline.grand_total, report.grand_total)

    lines = report.lines()
    lines += _square_block_lines(gcfg, report)
    lines.append(f"parameter-saving thresholds: closed form r > "
                 f"{thresholds['closed_form']}, enumerated r > "
                 f"{thresholds['enumerated']:.4f}")
    lines.append(f"skip baseline total: {baseline.grand_total} "
                 f"({baseline.grand_total / 1e6:.2f}M)")
    lines.append(f"reduction vs skip baseline: {reduction:.2f}%")
    lines += report.kv_lines()
    lines.append(f"baseline_total={baseline.grand_total}")
    lines.append(f"reduction_percent={reduction:.6f}")
    print("\n".join(lines))
    _write_report(args.out, lines)
    return EXIT_OK


def _sample_grid(gen: Generator, seed: int, count: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    z = Tensor(rng.standard_normal((count, gen.config.style_dim))
               .astype(gen.dtype))
    return gen.forward(z).image.data


def cmd_train(args) -> int:
    cfg = RunConfig.from_file(args.config)
    os.makedirs(args.out, exist_ok=True)
    result = train(cfg.to_generator_config(), cfg.to_loss_config(),
                   ToyDatasetSpec(resolution=cfg.resolution, seed=cfg.seed),
                   steps=cfg.steps, seed=cfg.seed, batch_size=cfg.batch,
                   dtype=cfg.dtype)

    csv_path = os.path.join(args.out, "history.csv")
    checkpoint.atomic_write(csv_path, result.history.to_csv_text().encode("ascii"))

    arrays = {}
    for name, t in result.generator.named_params():
        arrays[f"g.{name}"] = t.data
    for name, arr in result.ema_params.items():
        arrays[f"g_ema.{name}"] = arr
    for name, t in result.discriminator.named_params():
        arrays[f"d.{name}"] = t.data
    ckpt_path = os.path.join(args.out, "checkpoint.sqzg")
    checkpoint.save(ckpt_path, cfg.canonical_text(), arrays)

    grid = _sample_grid(ema_generator(result), cfg.seed, SAMPLE_GRID ** 2)
    tiled = ppm.tile_grid(list(grid), SAMPLE_GRID, SAMPLE_GRID)
    ppm.write_ppm(os.path.join(args.out, "samples.ppm"), tiled)

    last = result.history.steps[-1]
    print(f"trained {cfg.steps} steps ({backend.name()} kernels): "
          f"d_loss={last.d_loss:.4f} g_loss={last.g_loss:.4f} r1={last.r1:.4f}")
    print(f"wrote {csv_path}, {ckpt_path}, samples.ppm")
    return EXIT_OK


def cmd_generate(args) -> int:
    config_text, arrays = checkpoint.load(args.checkpoint)
    cfg = RunConfig.parse(config_text)
    if args.config:
        given = RunConfig.from_file(args.config)
        if given.canonical_text() != cfg.canonical_text():
            raise ConfigError("checkpoint embeds a different configuration "
                              "than the one supplied")
    if args.count < 0:
        raise ConfigError(f"--count must be >= 0, got {args.count}")
    os.makedirs(args.out, exist_ok=True)
    if args.count == 0:
        return EXIT_OK
    gen = Generator(cfg.to_generator_config(), dtype=cfg.dtype, seed=0)
    prefix = "g_ema."
    gen.load_param_dict({name[len(prefix):]: arr for name, arr in arrays.items()
                         if name.startswith(prefix)})
    rng = np.random.default_rng(args.seed)
    z = Tensor(rng.standard_normal((args.count, cfg.style_dim)).astype(cfg.dtype))
    images = gen.forward(z).image.data
    for i in range(args.count):
        ppm.write_ppm(os.path.join(args.out, f"sample_{i:03d}.ppm"), images[i])
    print(f"wrote {args.count} images to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_suite(args.suite)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: "
              f"rel_err={r.rel_err:.3e} (tol {r.tol:g})")
    worst = max(results, key=lambda r: r.rel_err / r.tol)
    print(f"worst: {worst.name} rel_err={worst.rel_err:.3e} (tol {worst.tol:g})")
    return EXIT_OK if not failed else EXIT_FAIL


def _load_csv_matrix(path: str) -> np.ndarray:
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read CSV {path}: {exc}") from None
    return data


def cmd_metrics(args) -> int:
    if not args.probs and not (args.features_p and args.features_q):
        raise ConfigError("need --probs TABLE.csv and/or both --features-p "
                          "and --features-q")
    if bool(args.features_p) != bool(args.features_q):
        raise ConfigError("--features-p and --features-q go together")
    if args.features_p:
        p = metrics.fit_gaussian(_load_csv_matrix(args.features_p))
        q = metrics.fit_gaussian(_load_csv_matrix(args.features_q))
        print(f"frechet_distance={metrics.frechet_distance(p, q):.12g}")
    if args.probs:
        score = metrics.inception_score(_load_csv_matrix(args.probs))
        print(f"inception_score={score:.12g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sqzgan",
        description="Desk-scale synthesis-path verification tool: skip vs "
                    "squeeze generator blocks, equivalence checks, parameter "
                    "accounting, toy adversarial training.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="check direct vs concat aggregation")
    p.add_argument("config")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--precision", choices=("f32", "f64"), default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("params", help="parameter accounting report")
    p.add_argument("config")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_params)

    p = sub.add_parser("train", help="toy adversarial training run")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("generate", help="sample images from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    p.add_argument("--suite", default="core")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("metrics", help="Frechet distance / inception score "
                                        "over CSV files")
    p.add_argument("--features-p", default=None)
    p.add_argument("--features-q", default=None)
    p.add_argument("--probs", default=None)
    p.set_defaults(fn=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_FAIL


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
