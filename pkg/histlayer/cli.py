import logging
import sys
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Dict

import click

from .binning import BinningConfig, activation_stack
from .colorspace import ImageRGB8, read_png, rgb_to_yuv, write_png, yuv_to_rgb
from .core import (
    BinningError,
    DegenerateJoint,
    EmptyDistribution,
    HistLayerError,
    HistogramFormatError,
    ImageReadError,
    OptimizationError,
    Settings,
    SettingsError,
    ShapeMismatch,
)
from .gradcheck import DEFAULT_STEP, check_total_loss
from .histogram import SoftHistogram, soft_histogram
from .joint import joint_histogram
from .metrics import CHANNELS, LossWeights, TotalLoss, d_mi, emd, entropy, reference_histograms
from .optim import InitMode, OptimizationConfig, classical_emd, optimize
from .serialization import json_dump, json_load

EXIT_USAGE = 1
EXIT_IO = 2
EXIT_SHAPE = 3
EXIT_OPTIMIZATION = 4
EXIT_GRADCHECK = 5

logger = logging.getLogger(__name__)


class ClickHandler(logging.Handler):
    """Logging handler writing records to stderr through click."""

    COLORS = {logging.WARNING: "yellow", logging.ERROR: "red", logging.CRITICAL: "red"}

    def emit(self, record: logging.LogRecord) -> None:
        try:
            message = self.format(record)
            click.echo(click.style(message, fg=self.COLORS.get(record.levelno)), err=True)
        except Exception:
            self.handleError(record)


def configure_logging(verbosity: int) -> None:
    root = logging.getLogger("histlayer")
    for handler in [h for h in root.handlers if isinstance(h, ClickHandler)]:
        root.removeHandler(handler)

    handler = ClickHandler()
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(max(logging.WARNING - 10 * verbosity, logging.DEBUG))
    root.propagate = False


def fail(message: str, exit_code: int) -> None:
    click.secho(message, fg="red", err=True)
    sys.exit(exit_code)


class HistLayerGroup(click.Group):
    """Command group reporting usage errors with exit code 1."""

    def main(self, *args, **kwargs):
        kwargs["standalone_mode"] = False
        try:
            return super().main(*args, **kwargs)
        except click.UsageError as e:
            e.exit_code = EXIT_USAGE
            e.show()
            sys.exit(EXIT_USAGE)
        except click.ClickException as e:
            e.show()
            sys.exit(e.exit_code)
        except click.Abort:
            fail("Aborted!", EXIT_USAGE)
        except ShapeMismatch as e:
            fail(str(e), EXIT_SHAPE)
        except HistLayerError as e:
            fail(str(e), EXIT_USAGE)
        except OSError as e:
            fail(str(e), EXIT_IO)


@dataclass
class HistLayer:
    settings_path: str | None = None
    threads: int = 1

    @cached_property
    def settings(self) -> Settings:
        return Settings(self.settings_path)


def binning_options(function: Callable) -> Callable:
    function = click.option(
        "--bandwidth-ratio",
        type=click.FloatRange(min=0, min_open=True),
        default=2.5,
        show_default=True,
        help="Kernel bandwidth as a fraction of the bin width (B = L / ratio)",
    )(function)
    function = click.option(
        "--bins",
        type=click.IntRange(min=1),
        default=256,
        show_default=True,
        help="Number of histogram bins K",
    )(function)
    return function


def make_binning(bins: int, bandwidth_ratio: float) -> BinningConfig:
    try:
        return BinningConfig(bins, bandwidth_ratio)
    except BinningError as e:
        fail(str(e), EXIT_USAGE)
        raise


def load_image(path: str) -> ImageRGB8:
    try:
        return read_png(path)
    except ImageReadError as e:
        fail(str(e), EXIT_IO)
        raise


def write_text(path: str | Path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as e:
        fail(f"Cannot write {path}: {e}", EXIT_IO)


def emit(text: str, output: str | None) -> None:
    if output:
        write_text(output, text)
    else:
        click.echo(text, nl=False)


@click.group(cls=HistLayerGroup, help="Differentiable color histograms and histogram matching")
@click.option("--config", "settings_path", help="Path to a YAML settings file")
@click.option("--threads", type=click.IntRange(min=1), help="Worker threads for activation maps")
@click.option("-v", "--verbose", count=True, help="Increase logging verbosity")
@click.version_option(package_name="histlayer")
@click.pass_context
def histlayer(ctx, settings_path: str | None, threads: int | None, verbose: int) -> None:
    configure_logging(verbose)
    ctx.ensure_object(HistLayer)
    ctx.obj.settings_path = settings_path

    settings = ctx.obj.settings
    try:
        ctx.default_map = settings.default_map(
            {
                name: [param.name for param in command.params]
                for name, command in histlayer.commands.items()
                if name != "gradcheck"
            }
        )
        ctx.obj.threads = threads or settings.threads or 1
    except SettingsError as e:
        fail(str(e), EXIT_USAGE)


@histlayer.command(help="Compute the soft histogram of image channels")
@click.argument("image")
@click.option(
    "--channel",
    type=click.Choice(CHANNELS + ("all",)),
    default="all",
    show_default=True,
    help="Channel to histogram",
)
@click.option("--output", "-o", help="Write the JSON to this file instead of stdout")
@binning_options
@click.pass_context
def hist(ctx, image: str, channel: str, output: str | None, bins: int, bandwidth_ratio: float) -> None:
    config = make_binning(bins, bandwidth_ratio)
    yuv = rgb_to_yuv(load_image(image), config)

    def histogram(name: str) -> Dict[str, Any]:
        values = yuv.channels[CHANNELS.index(name)]
        return soft_histogram(activation_stack(values, config, ctx.obj.threads)).to_dict()

    if channel == "all":
        data: Dict[str, Any] = {name: histogram(name) for name in CHANNELS}
    else:
        data = histogram(channel)
    emit(json_dump(data), output)


@histlayer.command(help="Compute the soft joint histogram of one channel of two images")
@click.argument("image_a")
@click.argument("image_b")
@click.option("--channel", type=click.Choice(CHANNELS), default="y", show_default=True)
@click.option(
    "--format", "output_format", type=click.Choice(["json", "csv"]), default="json", show_default=True
)
@click.option("--output", "-o", help="Write to this file instead of stdout")
@binning_options
@click.pass_context
def jointhist(
    ctx,
    image_a: str,
    image_b: str,
    channel: str,
    output_format: str,
    output: str | None,
    bins: int,
    bandwidth_ratio: float,
) -> None:
    config = make_binning(bins, bandwidth_ratio)
    a = rgb_to_yuv(load_image(image_a), config)
    b = rgb_to_yuv(load_image(image_b), config)
    if a.shape != b.shape:
        fail(f"Image sizes differ: {a.shape} vs {b.shape}", EXIT_SHAPE)

    index = CHANNELS.index(channel)
    joint = joint_histogram(
        activation_stack(a.channels[index], config, ctx.obj.threads),
        activation_stack(b.channels[index], config, ctx.obj.threads),
    )
    emit(joint.to_csv() if output_format == "csv" else json_dump(joint.to_dict()), output)


@histlayer.command(help="Compare two images with per-channel EMD and D_MI")
@click.argument("image_a")
@click.argument("image_b")
@click.option("--emd-only", is_flag=True, help="Skip D_MI, allowing images of different sizes")
@binning_options
@click.pass_context
def metrics(ctx, image_a: str, image_b: str, emd_only: bool, bins: int, bandwidth_ratio: float) -> None:
    config = make_binning(bins, bandwidth_ratio)
    a = rgb_to_yuv(load_image(image_a), config)
    b = rgb_to_yuv(load_image(image_b), config)
    if not emd_only and a.shape != b.shape:
        fail(f"Image sizes differ: {a.shape} vs {b.shape}, D_MI needs equal sizes", EXIT_SHAPE)

    threads = ctx.obj.threads
    stacks_a = [activation_stack(c, config, threads) for c in a.channels]
    stacks_b = [activation_stack(c, config, threads) for c in b.channels]

    hists_a = [soft_histogram(s) for s in stacks_a]
    hists_b = [soft_histogram(s) for s in stacks_b]

    data: Dict[str, Any] = {
        "emd": {name: emd(ha, hb) for name, ha, hb in zip(CHANNELS, hists_a, hists_b)},
        "entropy": {
            name: [entropy(ha), entropy(hb)] for name, ha, hb in zip(CHANNELS, hists_a, hists_b)
        },
    }
    if not emd_only:
        data["d_mi"] = {}
        for name, sa, sb in zip(CHANNELS, stacks_a, stacks_b):
            try:
                data["d_mi"][name] = d_mi(joint_histogram(sa, sb))
            except (DegenerateJoint, EmptyDistribution) as e:
                logger.warning("D_MI undefined on channel %s: %s", name, e)
                data["d_mi"][name] = None

    click.echo(json_dump(data), nl=False)


def load_reference_histograms(path: str, config: BinningConfig) -> tuple[SoftHistogram, ...]:
    try:
        data = json_load(Path(path).read_text())
        hists = tuple(SoftHistogram.from_dict(data[name], config.bandwidth_ratio) for name in CHANNELS)
    except OSError as e:
        fail(f"Cannot read histogram file {path}: {e}", EXIT_IO)
        raise
    except (ValueError, KeyError, TypeError, HistogramFormatError) as e:
        fail(f"Invalid histogram file {path}: {e}", EXIT_IO)
        raise

    for name, h in zip(CHANNELS, hists):
        if h.config != config:
            fail(f"Histogram {name} in {path} has {h.config.bins} bins, expected {config.bins}", EXIT_USAGE)
    return hists


@histlayer.command(help="Match the colors of an image to a reference image or histogram")
@click.argument("source")
@click.option("--ref-image", help="Reference image providing the target colors")
@click.option("--ref-hist", help="Reference histograms JSON, as written by `histlayer hist`")
@click.option("--output", "-o", required=True, help="Output PNG")
@click.option("--trace", help="Loss trace CSV  [default: OUTPUT with .csv suffix]")
@click.option("--report", help="Final loss report JSON  [default: OUTPUT with .json suffix]")
@click.option("--steps", type=click.IntRange(min=1), default=2000, show_default=True)
@click.option("--lr", type=click.FloatRange(min=0, min_open=True), default=0.01, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--lambda-emd", type=click.FloatRange(min=0), default=1.0, show_default=True)
@click.option("--lambda-mi", type=click.FloatRange(min=0), default=1.0, show_default=True)
@click.option(
    "--init",
    type=click.Choice([mode.value for mode in InitMode]),
    default=InitMode.FROM_SOURCE.value,
    show_default=True,
)
@click.option("--log-every", type=click.IntRange(min=1), default=100, show_default=True)
@binning_options
@click.pass_context
def match(
    ctx,
    source: str,
    ref_image: str | None,
    ref_hist: str | None,
    output: str,
    trace: str | None,
    report: str | None,
    steps: int,
    lr: float,
    seed: int,
    lambda_emd: float,
    lambda_mi: float,
    init: str,
    log_every: int,
    bins: int,
    bandwidth_ratio: float,
) -> None:
    if (ref_image is None) == (ref_hist is None):
        fail("Provide exactly one of --ref-image and --ref-hist", EXIT_USAGE)

    config = make_binning(bins, bandwidth_ratio)
    cfg = OptimizationConfig(
        max_steps=steps,
        weights=LossWeights(lambda_emd, lambda_mi),
        binning=config,
        lr=lr,
        seed=seed,
        log_every=log_every,
        init_mode=InitMode(init),
        threads=ctx.obj.threads,
    )

    src = rgb_to_yuv(load_image(source), cfg.binning)
    ref = None
    if ref_image:
        ref = rgb_to_yuv(load_image(ref_image), cfg.binning)
        ref_hists = reference_histograms(ref, cfg.binning, cfg.threads)
    else:
        ref_hists = load_reference_histograms(ref_hist, cfg.binning)  # type: ignore[arg-type]

    try:
        out, loss_trace = optimize(src, ref_hists, cfg)
    except (OptimizationError, EmptyDistribution) as e:
        fail(f"Optimization failed: {e}", EXIT_OPTIMIZATION)
        raise

    final, _ = TotalLoss(src, ref_hists, cfg.weights, cfg.binning, cfg.threads).evaluate(
        out, skip_degenerate=True
    )
    data = final.to_dict()
    data["steps"] = steps
    data["warnings"] = [{"step": step, "message": message} for step, message in loss_trace.warnings]
    if ref is not None:
        data["classical_emd"] = classical_emd(src, ref, ref_hists, cfg.binning)

    output_path = Path(output)
    try:
        write_png(output_path, yuv_to_rgb(out))
    except OSError as e:
        fail(f"Cannot write {output_path}: {e}", EXIT_IO)
    write_text(trace or output_path.with_suffix(".csv"), loss_trace.to_csv())
    write_text(report or output_path.with_suffix(".json"), json_dump(data))

    click.echo(f"Wrote {output_path} (loss {final.total:.6g} after {steps} steps)")


@histlayer.command(help="Check the analytic pixel gradient against finite differences")
@click.option("--size", type=click.IntRange(min=1), default=8, show_default=True)
@click.option("--bins", type=click.IntRange(min=1), default=16, show_default=True)
@click.option(
    "--bandwidth-ratio", type=click.FloatRange(min=0, min_open=True), default=2.5, show_default=True
)
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--step", type=click.FloatRange(min=0, min_open=True), default=DEFAULT_STEP, show_default=True)
@click.option("--threshold", type=click.FloatRange(min=0, min_open=True), default=1e-4, show_default=True)
@click.option("--json", "as_json", is_flag=True, help="Print the report as JSON only")
def gradcheck(
    size: int, bins: int, bandwidth_ratio: float, seed: int, step: float, threshold: float, as_json: bool
) -> None:
    try:
        result = check_total_loss(size, bins, seed, step, bandwidth_ratio)
    except HistLayerError as e:
        fail(f"Gradient check failed: {e}", EXIT_GRADCHECK)
        raise
    except ValueError as e:
        fail(str(e), EXIT_USAGE)
        raise

    passed = result.passed(threshold)
    if as_json:
        click.echo(json_dump(result.to_dict()), nl=False)
    else:
        status = click.style("OK", fg="green") if passed else click.style("FAILED", fg="red")
        click.echo(
            f"{result.op_name}: max relative error {result.max_rel_error:.3e} "
            f"over {result.num_points} points (step {result.step:g}) {status}"
        )

    if not passed:
        sys.exit(EXIT_GRADCHECK)

