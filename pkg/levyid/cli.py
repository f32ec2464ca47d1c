#!/usr/bin/env python
"""levyid - Lévy SDE drift identification : CLI application."""

import argparse
import csv
import logging
import sys
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from . import DEBUG, VERSION, settings
from .drift import (
    FourierDrift,
    SymmetrySpec,
    coefficients_by_quadrature,
    read_coefficients,
    sine_embedding,
    write_coefficients,
)
from .errors import LevyIdError
from .evaluation import (
    EvalReport,
    RunManifest,
    coeff_mae,
    drift_error_on_box,
    export_phase_portrait,
    fixed_points_path,
    loss_scan,
    trajectory_test_error,
    write_scan_csv,
)
from .grid import SpectralGrid, empirical_cf, write_cf_csv
from .identification import LossConfig, TrainConfig, chained_loss, mmd_loss
from .identification import train as train_model
from .propagator import stability_curve, stability_margin
from .simulator import (
    DriftSpec,
    GaussianInit,
    GridInit,
    InitSpec,
    PointInit,
    SimulationConfig,
    filter_box,
    read_dataset,
    write_dataset,
)
from .verification import ORACLES, run_oracles

Settings = Dict[str, Dict[str, Any]]

SETTINGS_NOTE = (
    "propagator.decay defaults to componentwise, the product of "
    "exp(-h |g_l s_l|^alpha) over the axes. Set it to projected for "
    "exp(-h |ds j.g|^alpha); the two agree in one dimension. loss.pad = -1 "
    "widens the evolution grid by ceil(2 M dt) + J n_L points per side."
)


def main(argv: Optional[List[str]] = None) -> int:
    """Run the application."""
    return LevyIdCli(argv).exit_code


# SETTINGS TO OBJECTS #


def broadcast_g(values: Settings, dim: int) -> Tuple[float, ...]:
    """Noise scales for every axis; a single value applies to all."""
    g = tuple(values["simulate"]["g"])
    if len(g) == 1:
        return g * dim
    if len(g) != dim:
        raise settings.ConfigError(
            "simulate.g", f"expected 1 or {dim} values, got {len(g)}"
        )
    return g


def build_drift(values: Settings) -> DriftSpec:
    """Ground-truth drift named in [simulate]."""
    sim = values["simulate"]
    if sim["drift"] == "fourier":
        return DriftSpec.fourier(read_coefficients(sim["coefficients"]))
    return DriftSpec(sim["drift"])


def build_init(values: Settings, dim: int) -> InitSpec:
    """Initial-condition spec from [simulate]."""
    sim = values["simulate"]
    if sim["init"] == "gaussian":
        return GaussianInit(sim["init_std"])
    if sim["init"] == "grid":
        return GridInit(sim["grid_lo"], sim["grid_hi"], sim["grid_per_axis"])
    point = tuple(sim["init_point"])
    if len(point) not in (1, dim):
        raise settings.ConfigError(
            "simulate.init_point", f"expected 1 or {dim} values"
        )
    return PointInit(point)


def simulation_config(values: Settings, dim: int) -> SimulationConfig:
    """Step and noise settings from [simulate]."""
    sim = values["simulate"]
    return SimulationConfig(
        g=broadcast_g(values, dim),
        alpha=sim["alpha"],
        fine_step=sim["fine_step"],
        total_steps=sim["total_steps"],
        save_stride=sim["save_stride"],
        workers=sim["workers"],
    )


def build_grid(values: Settings, dim: int) -> SpectralGrid:
    """Frequency grid from [grid]."""
    grid = values["grid"]
    return SpectralGrid(L=grid["L"], M=grid["M"], n_L=grid["n_L"], dim=dim)


def loss_config(values: Settings, dim: int) -> LossConfig:
    """Loss settings from [grid], [propagator], [loss] and [simulate]."""
    prop, loss = values["propagator"], values["loss"]
    return LossConfig(
        grid=build_grid(values, dim),
        alpha=values["simulate"]["alpha"],
        g=broadcast_g(values, dim),
        nu=prop["nu"],
        mode=loss["mode"],
        mu=loss["mu"],
        gaussian_reg=loss["gaussian_reg"],
        decay=prop["decay"],
        pad=None if loss["pad"] < 0 else loss["pad"],
        checkpoint_every=prop["checkpoint_every"],
        batch_size=loss["batch_size"],
        workers=loss["workers"],
        instability_threshold=prop["instability_threshold"],
    )


def train_config(
    values: Settings, dim: int, initial: Optional[FourierDrift] = None
) -> TrainConfig:
    """Optimizer settings from [model] and [train]."""
    tr = values["train"]
    return TrainConfig(
        J=values["model"]["J"],
        gtol=tr["gtol"],
        xtol=tr["xtol"],
        max_iter=tr["max_iter"],
        initial_radius=tr["initial_radius"],
        patience=tr["patience"],
        memory=tr["memory"],
        symmetry=SymmetrySpec.parse(values["model"]["symmetry"], dim),
        initial=initial,
        seed=tr["seed"],
    )


def truth_coefficients(
    drift: DriftSpec, J: int, L: int
) -> Optional[FourierDrift]:
    """Reference coefficients of a ground-truth drift, when comparable."""
    if drift.model is not None:
        model = drift.model
        if (model.J, model.L) != (J, L):
            return None
        return model
    return coefficients_by_quadrature(drift, J, L, drift.dim)


def scan_values(values: Settings) -> np.ndarray:
    """Scan points scan_start, scan_start + scan_step, ... up to scan_stop."""
    ev = values["eval"]
    count = int(round((ev["scan_stop"] - ev["scan_start"]) / ev["scan_step"]))
    return ev["scan_start"] + ev["scan_step"] * np.arange(count + 1)


class LevyIdCli:
    """levyid CLI application class."""

    logger: Any = None
    settings: Settings = {}
    exit_code: int = 0

    def __init__(self, argv: Optional[List[str]] = None) -> None:
        """Initialize the class and run the requested command."""
        if DEBUG:
            logformat = (
                "[%(asctime)s] %(levelname)-8s {%(pathname)s:%(lineno)d} "
                "- %(message)s"
            )
            loglevel = logging.DEBUG
        else:
            logformat = "%(levelname)-8s %(message)s"
            loglevel = logging.WARNING

        logging.basicConfig(
            level=loglevel,
            format=logformat,
            datefmt="%Y-%m-%d %H:%M:%S",
        )
        self.logger = logging.getLogger(__name__)
        self.manifest = RunManifest(command="", version=VERSION)

        try:
            self.exit_code = self.__run(argv)
        except SystemExit as err:
            self.exit_code = err.code if isinstance(err.code, int) else 2

    def __str__(self) -> str:
        """Return a string value representing the object."""
        return f"LevyIdCli<>(exit_code={self.exit_code})"

    def __run(self, argv: Optional[List[str]]) -> int:
        parser = self.__build_parser()
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_usage(sys.stderr)
            return 2

        if args.verbose > 1:
            logging.getLogger().setLevel(logging.DEBUG)
        elif args.verbose > 0 and not DEBUG:
            logging.getLogger().setLevel(logging.INFO)

        try:
            self.settings = settings.get_settings(args.config)
            settings.apply_overrides(self.settings, args.set or [])
            settings.validate(self.settings)
            if args.save_config:
                path = settings.write_settings(self.settings, args.config)
                self.logger.info("Saved settings to %s", path)
            self.manifest = RunManifest(
                command=args.command,
                version=VERSION,
                settings=self.settings,
            )
            config_file = settings.config_path(args.config)
            if config_file.exists():
                self.manifest.add_file("config", config_file)
            return getattr(self, f"run_{args.command}")(args)
        except settings.ConfigError as err:
            self.logger.error("Invalid configuration: %s", err)
            return 2
        except (LevyIdError, OSError) as err:
            self.logger.error("%s", err)
            return 1

    def __build_parser(self) -> argparse.ArgumentParser:
        """Get command line arguments and options."""
        common = argparse.ArgumentParser(add_help=False)
        common.add_argument(
            "--config",
            help="read settings from this file "
            f"(default {settings.config_path()})",
        )
        common.add_argument(
            "--set",
            action="append",
            metavar="SECTION.KEY=VALUE",
            help="override a setting, may be repeated",
        )
        common.add_argument(
            "--save-config",
            action="store_true",
            help="write the effective settings to the config file",
        )
        common.add_argument(
            "--manifest", help="write the run manifest to this file"
        )
        common.add_argument(
            "-v",
            "--verbose",
            action="count",
            default=0,
            help="show more verbose output",
        )

        parser = argparse.ArgumentParser(prog="levyid", epilog=SETTINGS_NOTE)
        parser.add_argument(
            "--version",
            action="version",
            version=f"%(prog)s {VERSION}",
            help="show version",
        )
        commands = parser.add_subparsers(dest="command", metavar="command")

        simulate = commands.add_parser(
            "simulate", parents=[common], help="generate a dataset"
        )
        simulate.add_argument("-o", "--output", default="dataset.csv")
        simulate.add_argument(
            "--ecf", help="also write the ECF of the last snapshot here"
        )

        train = commands.add_parser(
            "train",
            parents=[common],
            help="fit drift coefficients",
            epilog=SETTINGS_NOTE,
        )
        train.add_argument("-d", "--dataset", required=True)
        train.add_argument("-o", "--output", default="coefficients.csv")
        train.add_argument("--report", default="report.yaml")
        train.add_argument("--initial", help="starting coefficients CSV")

        scan = commands.add_parser(
            "scan", parents=[common], help="loss landscape of the sine model"
        )
        scan.add_argument("-d", "--dataset", required=True)
        scan.add_argument("-o", "--output", default="scan.csv")

        evaluate = commands.add_parser(
            "eval", parents=[common], help="evaluate learned coefficients"
        )
        evaluate.add_argument("-c", "--coefficients", required=True)
        evaluate.add_argument("-d", "--dataset", help="also report losses")
        evaluate.add_argument("-o", "--output", default="eval.yaml")
        evaluate.add_argument(
            "--no-trajectories",
            action="store_true",
            help="skip the trajectory test error",
        )

        portrait = commands.add_parser(
            "portrait", parents=[common], help="export a 2D phase portrait"
        )
        portrait.add_argument(
            "-c", "--coefficients", help="learned model (default: truth)"
        )
        portrait.add_argument("-o", "--output", default="portrait.csv")

        stability = commands.add_parser(
            "stability", parents=[common], help="print the stable h*ds bound"
        )
        stability.add_argument("--g", type=float, help="noise scale")
        stability.add_argument("--alpha", type=float, help="stability index")
        stability.add_argument("--curve", help="write |Phi(w)| to this CSV")
        stability.add_argument("--w-max", type=float, default=3.0)
        stability.add_argument("--points", type=int, default=301)

        oracle = commands.add_parser(
            "oracle", parents=[common], help="run the verification suite"
        )
        oracle.add_argument(
            "names",
            nargs="*",
            metavar="name",
            help=f"oracles to run ({', '.join(ORACLES)})",
        )
        oracle.add_argument(
            "--slow", action="store_true", help="include slow oracles"
        )
        return parser

    def __finish(self, args: argparse.Namespace, output: Optional[str]) -> int:
        """Write the manifest next to the output, or where asked."""
        path = args.manifest
        if not path and output:
            path = f"{output}.manifest.yaml"
        if path:
            self.manifest.write(path)
        return 0

    def run_simulate(self, args: argparse.Namespace) -> int:
        """Generate, filter and write a dataset."""
        sim = self.settings["simulate"]
        drift = build_drift(self.settings)
        dataset = simulation_config(self.settings, drift.dim).run(
            drift,
            build_init(self.settings, drift.dim),
            sim["n_trajectories"],
            sim["seed"],
        )
        if sim["box_lo"]:
            dataset = filter_box(dataset, sim["box_lo"], sim["box_hi"])
        write_dataset(dataset, args.output)
        print(dataset.summary())

        self.manifest.add_file("dataset", args.output)
        self.manifest.seeds["simulate"] = sim["seed"]
        if sim["drift"] == "fourier":
            self.manifest.add_file("truth", sim["coefficients"])
        if args.ecf:
            grid = build_grid(self.settings, dataset.dim)
            cf_field = empirical_cf(
                dataset,
                dataset.n_observations - 1,
                grid,
                self.settings["loss"]["gaussian_reg"],
            )
            write_cf_csv(cf_field, args.ecf)
            self.manifest.add_file("ecf", args.ecf)
        return self.__finish(args, args.output)

    def run_train(self, args: argparse.Namespace) -> int:
        """Fit coefficients and write them with a run report."""
        dataset = read_dataset(args.dataset)
        initial = read_coefficients(args.initial) if args.initial else None
        cfg = loss_config(self.settings, dataset.dim)
        model, report = train_model(
            dataset, cfg, train_config(self.settings, dataset.dim, initial)
        )

        truth_name = dataset.provenance.get("drift")
        if truth_name in settings.KNOWN_DRIFTS and truth_name != "fourier":
            truth = truth_coefficients(DriftSpec(truth_name), model.J, model.L)
            if truth is not None:
                report.coeff_mae = coeff_mae(model, truth)
                print(f"coefficient MAE {report.coeff_mae:.3e}")

        write_coefficients(model, args.output)
        report.write(args.report)
        print(f"{report.message}: loss {report.loss:.6e}")

        self.manifest.add_file("dataset", args.dataset)
        self.manifest.add_file("coefficients", args.output)
        self.manifest.add_file("report", args.report)
        if args.initial:
            self.manifest.add_file("initial", args.initial)
        self.manifest.seeds["train"] = self.settings["train"]["seed"]
        return self.__finish(args, args.output)

    def run_scan(self, args: argparse.Namespace) -> int:
        """Loss over the one-parameter sine family."""
        dataset = read_dataset(args.dataset)
        if dataset.dim != 1:
            raise settings.ConfigError(
                "simulate.drift", "the scan embedding is one-dimensional"
            )
        J, L = self.settings["model"]["J"], self.settings["grid"]["L"]
        rows = loss_scan(
            dataset,
            lambda theta: sine_embedding(theta, J, L),
            scan_values(self.settings),
            loss_config(self.settings, 1),
        )
        write_scan_csv(rows, args.output)
        theta, loss = min(rows, key=lambda row: row[1])
        print(f"minimum {loss:.6e} at theta={theta:.4f}")

        self.manifest.add_file("dataset", args.dataset)
        self.manifest.add_file("scan", args.output)
        return self.__finish(args, args.output)

    def run_eval(self, args: argparse.Namespace) -> int:
        """Coefficient, field and trajectory errors of a learned model."""
        learned = read_coefficients(args.coefficients)
        truth = build_drift(self.settings)
        ev = self.settings["eval"]
        report = EvalReport()

        reference = truth_coefficients(truth, learned.J, learned.L)
        if reference is not None and reference.dim == learned.dim:
            report.coeff_mae = coeff_mae(learned, reference)
        lo, hi = ev["error_box"]
        report.drift_error = drift_error_on_box(learned, truth, lo, hi)

        if args.dataset:
            dataset = read_dataset(args.dataset)
            cfg = loss_config(self.settings, dataset.dim)
            report.loss = mmd_loss(learned, dataset, cfg)
            report.chained_loss = chained_loss(learned, dataset, cfg)
            self.manifest.add_file("dataset", args.dataset)

        if not args.no_trajectories:
            trajectories = trajectory_test_error(
                learned,
                truth,
                simulation_config(self.settings, truth.dim),
                ev["n_test"],
                ev["seed"],
            )
            trajectories.coeff_mae = report.coeff_mae
            trajectories.drift_error = report.drift_error
            trajectories.loss = report.loss
            trajectories.chained_loss = report.chained_loss
            report = trajectories
            self.manifest.seeds["eval"] = ev["seed"]

        report.write(args.output)
        for key, value in report.as_dict().items():
            if isinstance(value, float):
                print(f"{key:<22} {value:.6g}")

        self.manifest.add_file("coefficients", args.coefficients)
        self.manifest.add_file("report", args.output)
        return self.__finish(args, args.output)

    def run_portrait(self, args: argparse.Namespace) -> int:
        """Write the field of a 2D model and its fixed points."""
        ev = self.settings["eval"]
        if args.coefficients:
            model: Any = read_coefficients(args.coefficients)
            self.manifest.add_file("coefficients", args.coefficients)
        else:
            model = build_drift(self.settings)
        portrait = export_phase_portrait(
            model, ev["bounds"], ev["resolution"], args.output
        )
        if portrait.degenerate:
            print("degenerate: the field vanishes on the whole grid")
        for point in portrait.fixed_points:
            print(f"{point.kind:<9} ({point.x[0]:+.3f}, {point.x[1]:+.3f})")

        self.manifest.add_file("portrait", args.output)
        self.manifest.add_file("fixed_points", fixed_points_path(args.output))
        return self.__finish(args, args.output)

    def run_stability(self, args: argparse.Namespace) -> int:
        """Print w* for the given or configured noise."""
        g = args.g if args.g is not None else self.settings["simulate"]["g"][0]
        alpha = (
            args.alpha
            if args.alpha is not None
            else self.settings["simulate"]["alpha"]
        )
        try:
            margin = stability_margin(g, alpha)
        except ValueError as err:
            raise settings.ConfigError("stability", str(err)) from err
        print("inf" if margin == float("inf") else f"{margin:.6f}")

        grid, prop = self.settings["grid"], self.settings["propagator"]
        dt = (
            self.settings["simulate"]["fine_step"]
            * self.settings["simulate"]["save_stride"]
        )
        w = dt / prop["nu"] / (grid["n_L"] * grid["L"])
        self.logger.info("Configured h*ds = %.3e", w)

        if args.curve:
            w_values = np.linspace(0.0, args.w_max, args.points)
            with open(args.curve, "w", newline="") as file_handle:
                writer = csv.writer(file_handle)
                writer.writerow(["w", "amplification"])
                for w_value, value in zip(
                    w_values, stability_curve(g, alpha, w_values)
                ):
                    writer.writerow([repr(float(w_value)), repr(float(value))])
            self.manifest.add_file("curve", args.curve)
        return self.__finish(args, args.curve)

    def run_oracle(self, args: argparse.Namespace) -> int:
        """Run the verification suite; exit 1 when an oracle fails."""
        unknown = sorted(set(args.names) - set(ORACLES))
        if unknown:
            raise settings.ConfigError(
                "oracle", f"unknown oracles: {', '.join(unknown)}"
            )
        results = run_oracles(args.names, slow=args.slow)
        for result in results:
            print(result.line())
        failed = [r.name for r in results if not r.passed]
        if failed:
            self.logger.error("Failed oracles: %s", ", ".join(failed))
        self.__finish(args, None)
        return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
