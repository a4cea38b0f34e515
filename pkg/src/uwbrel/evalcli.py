"""Monte-Carlo evaluation harness and command-line interface.

Subcommands: ``sweep`` (RMSE vs distance / direction error / MPC count),
``surface`` (likelihood grid dump), ``calibrate`` (channel-statistics
check), ``scenario-dump`` (one sampled scenario as CSV).  All output is
CSV with SI units; a run is fully determined by its configuration and
seed, with per-trial RNG streams derived from (seed, sweep point, trial).
"""

from __future__ import annotations

import argparse
import io
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from . import assoc, chansim, distest, posest
from .errors import ConfigError, InvalidParams, UwbrelError
from .geom import SPEED_OF_LIGHT, Scenario, complete_mpc
from .likelihood import ErrorModel

_C = SPEED_OF_LIGHT

ESTIMATOR_TAGS = ("MV", "NA", "SO", "DD", "PWA", "DDN", "TAU", "TNA")
_POSITION_TAGS = {"DD", "PWA", "DDN", "TAU", "TNA"}
_SCRAMBLED_TAGS = {"NA", "SO", "DDN", "TNA"}

CAL_TARGET_MEAN = 40.5e-9
CAL_TARGET_RMS = 26.3e-9
CAL_REL_BAND = 0.10

DEFAULT_COND_GATE = 1e5  # trial-validity gate on the reported condition number


@dataclass(frozen=True)
class ExperimentConfig:
    sweep: str = "distance"                  # distance | direction_error | mpc_count
    d: tuple = (2.0,)                        # meters (sweep values when sweep=distance)
    sigma: float = 0.2e-9                    # seconds
    sigma_dir: tuple = (0.0,)                # radians (sweep values when sweep=direction_error)
    m_observers: int = 3
    k_per_observer: tuple = (4,)             # sweep values when sweep=mpc_count
    trials: int = 1000
    trials_na: int = 200
    seed: int = 0
    estimators: tuple = ("MV", "SO", "DD", "PWA", "TAU")
    sv: chansim.SvParams = field(default_factory=chansim.SvParams)
    eps: float = 5e-9                        # seconds
    eps_a_max: float = 100e-9                # per-observer offsets ~ U(0, eps_a_max)
    cond_gate: float = DEFAULT_COND_GATE
    surface_kind: str = "known"              # known | noassoc
    surface_scenario: str = "canonical"      # canonical | random
    grid_steps: int = 200
    calib_samples: int = 1_000_000
    output_path: str = "-"

    def validate(self) -> None:
        if self.sweep not in ("distance", "direction_error", "mpc_count",
                              "surface", "calibrate"):
            raise ConfigError(f"unknown sweep {self.sweep!r}")
        if self.trials < 1 or self.trials_na < 1:
            raise ConfigError("trials must be >= 1")
        if not self.d or not self.sigma_dir or not self.k_per_observer:
            raise ConfigError("sweep ranges must be nonempty")
        if self.sigma < 0 or any(s < 0 for s in self.sigma_dir):
            raise ConfigError("noise levels must be nonnegative")
        if self.m_observers < 1 or any(k < 1 for k in self.k_per_observer):
            raise ConfigError("observer and MPC counts must be positive")
        bad = [t for t in self.estimators if t not in ESTIMATOR_TAGS]
        if bad:
            raise ConfigError(f"unknown estimator tags {bad}")
        if self.surface_kind not in ("known", "noassoc"):
            raise ConfigError("surface kind must be known or noassoc")
        if self.surface_scenario not in ("canonical", "random"):
            raise ConfigError("surface scenario must be canonical or random")


@dataclass(frozen=True)
class SweepResult:
    sweep_param: str
    rows: tuple  # dicts: value, estimator, trials, failures, rmse_m, mean_err_m

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("sweep_param,value,estimator,trials,failures,rmse_m,mean_err_m\n")
        for r in self.rows:
            buf.write(
                f"{self.sweep_param},{r['value']:.9g},{r['estimator']},"
                f"{r['trials']},{r['failures']},{r['rmse_m']:.9g},{r['mean_err_m']:.9g}\n"
            )
        return buf.getvalue()

    def lookup(self, value: float, estimator: str) -> dict:
        for r in self.rows:
            if r["estimator"] == estimator and np.isclose(r["value"], value):
                return r
        raise KeyError((value, estimator))


def _trial_rng(seed: int, point: int, trial: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, point, trial, stream])


def _groups(observations):
    out: dict = {}
    for ob in observations:
        out.setdefault(ob.observer_id, []).append(ob)
    return out


def _run_estimator(tag: str, scenario: Scenario, observations, scrambled,
                   cfg: ExperimentConfig):
    """One estimator on one trial; returns the error scalar (distance) or
    Euclidean norm (position).  Raises UwbrelError subclasses on failure."""
    d_true = scenario.d
    d_vec_true = scenario.d_vec

    if tag == "MV":
        est = distest.mvue_async(distest.DelayDiffSet.from_observations(observations))
        return est.d_hat - d_true
    if tag == "SO":
        pairing = assoc.associate_by_sorting(scrambled, scrambled)
        paired = assoc.apply_assignment(scrambled, scrambled, pairing)
        est = distest.mvue_async(distest.DelayDiffSet.from_observations(paired))
        return est.d_hat - d_true
    if tag == "NA":
        groups = _groups(scrambled)
        tau_a = [[ob.tau_a_meas for ob in g] for g in groups.values()]
        tau_b = [[ob.tau_b_meas for ob in g] for g in groups.values()]
        model = (ErrorModel(kind="gaussian", sigma_per_mpc=cfg.sigma)
                 if cfg.sigma > 0 else ErrorModel(kind="none"))
        est = distest.mle_async_noassoc(tau_a, tau_b, model)
        return est.d_hat - d_true

    if tag in ("DDN", "TNA"):
        # complete permutations: gated pairs stay in (their errors are part
        # of the association-quality measurement, not excluded trials)
        pairing = assoc.associate(scrambled, scrambled, force_full=True)
        inputs = assoc.apply_assignment(scrambled, scrambled, pairing)
    else:
        inputs = observations

    if tag in ("DD", "DDN"):
        est = posest.lse_by_delta(inputs)
    elif tag == "PWA":
        est = posest.lse_by_delta_pwa(inputs)
    else:  # TAU, TNA
        est = posest.lse_by_tau(inputs)
    if est.condition_number > cfg.cond_gate:
        raise posest.RankDeficient(
            f"condition {est.condition_number:.3g} above the harness gate"
        )
    return float(np.linalg.norm(est.d_vec - d_vec_true))


def run_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Monte-Carlo RMSE sweep over the configured parameter."""
    cfg.validate()
    if cfg.sweep == "distance":
        values = cfg.d
    elif cfg.sweep == "direction_error":
        values = cfg.sigma_dir
    elif cfg.sweep == "mpc_count":
        values = cfg.k_per_observer
    else:
        raise ConfigError(f"run_sweep cannot run sweep {cfg.sweep!r}")

    rows = []
    for p_idx, value in enumerate(values):
        d = cfg.d[0]
        sigma_dir = cfg.sigma_dir[0]
        k_per = cfg.k_per_observer[0]
        if cfg.sweep == "distance":
            d = value
        elif cfg.sweep == "direction_error":
            sigma_dir = value
        else:
            k_per = int(value)

        errors: dict = {t: [] for t in cfg.estimators}
        failures: dict = {t: 0 for t in cfg.estimators}
        counts: dict = {t: 0 for t in cfg.estimators}
        for trial in range(cfg.trials):
            scen_rng = _trial_rng(cfg.seed, p_idx, trial, 0)
            scenario = chansim.sample_scenario(
                d, cfg.sv, cfg.m_observers, [k_per] * cfg.m_observers, scen_rng
            )
            noise_rng = _trial_rng(cfg.seed, p_idx, trial, 1)
            noise = chansim.NoiseParams(
                sigma=cfg.sigma, sigma_dir=sigma_dir, eps=cfg.eps,
                eps_a_per_observer=tuple(noise_rng.uniform(0.0, cfg.eps_a_max,
                                                           cfg.m_observers)),
            )
            observations = chansim.observe(scenario, noise, noise_rng)
            scrambled = None
            if any(t in _SCRAMBLED_TAGS for t in cfg.estimators):
                scrambled, _ = chansim.scramble_association(
                    observations, _trial_rng(cfg.seed, p_idx, trial, 2)
                )
            for tag in cfg.estimators:
                if tag == "NA" and trial >= cfg.trials_na:
                    continue
                counts[tag] += 1
                try:
                    errors[tag].append(_run_estimator(tag, scenario, observations,
                                                      scrambled, cfg))
                except UwbrelError:
                    failures[tag] += 1

        for tag in cfg.estimators:
            errs = np.asarray(errors[tag], dtype=float)
            rows.append({
                "value": float(value),
                "estimator": tag,
                "trials": counts[tag],
                "failures": failures[tag],
                "rmse_m": float(np.sqrt(np.mean(errs ** 2))) if errs.size else float("nan"),
                "mean_err_m": float(np.mean(errs)) if errs.size else float("nan"),
            })
    return SweepResult(sweep_param=cfg.sweep, rows=tuple(rows))


# --- surface dump --------------------------------------------------------

def canonical_scenario(d: float, c: float = _C) -> Scenario:
    """Archetypal one-observer, three-path geometry (direct path, a mirror
    beyond node B, and a side reflection) whose hard-indicator likelihood
    peaks exactly at the true (d, eps)."""
    pos_a = np.zeros(3)
    pos_b = np.array([d, 0.0, 0.0])
    mpcs = (
        # direct path from an observer placed behind A on the B-axis
        complete_mpc(pos_a, pos_b, 5.0 / c, np.array([1.0, 0.0, 0.0]), c, 0, 0),
        # reflection off a wall beyond B: virtual source past B on the axis
        complete_mpc(pos_a, pos_b, 9.0 / c, np.array([-1.0, 0.0, 0.0]), c, 0, 1),
        # generic side reflection
        complete_mpc(pos_a, pos_b, 7.0 / c, np.array([0.0, -1.0, 0.0]), c, 0, 2),
    )
    return Scenario(pos_a=pos_a, pos_b=pos_b, mpcs=mpcs, c=c)


def dump_surface(cfg: ExperimentConfig) -> str:
    """Evaluate the (d, eps) log-likelihood on a grid; CSV ``d,eps,loglik``."""
    cfg.validate()
    d_true = cfg.d[0]
    if cfg.surface_scenario == "canonical":
        scenario = canonical_scenario(d_true)
    else:
        scenario = chansim.sample_scenario(
            d_true, cfg.sv, cfg.m_observers,
            list(cfg.k_per_observer) * cfg.m_observers if len(cfg.k_per_observer) == 1
            else list(cfg.k_per_observer),
            np.random.default_rng([cfg.seed, 0]),
        )
    noise = chansim.NoiseParams(sigma=cfg.sigma, eps=cfg.eps)
    observations = chansim.observe(scenario, noise,
                                   np.random.default_rng([cfg.seed, 1]))
    model = (ErrorModel(kind="gaussian", sigma_per_mpc=cfg.sigma)
             if cfg.sigma > 0 else ErrorModel(kind="none"))

    diffs = distest.DelayDiffSet.from_observations(observations)
    delta = diffs.stacked
    d_max = max(4.0 * _C * float(np.abs(delta).max()), 1e-3)
    d_grid = np.linspace(0.0, d_max, cfg.grid_steps)
    # keep the eps axis tight around the observed diffs: its resolution must
    # be fine enough (relative to the d step) to land inside the feasibility
    # wedge just above its apex
    spread = float(delta.max() - delta.min())
    e_pad = 0.05 * spread + 0.2e-9
    e_grid = np.linspace(delta.min() - e_pad, delta.max() + e_pad, cfg.grid_steps)

    if cfg.surface_kind == "known":
        vals = distest.loglik_known_assoc(diffs, model,
                                          d_grid[:, None], e_grid[None, :])
    else:
        groups = _groups(observations)
        tau_a = [[ob.tau_a_meas for ob in g] for g in groups.values()]
        tau_b = [[ob.tau_b_meas for ob in g] for g in groups.values()]
        vals = distest.loglik_no_assoc(tau_a, tau_b, model,
                                       d_grid[:, None], e_grid[None, :])

    buf = io.StringIO()
    buf.write("d,eps,loglik\n")
    for i, dv in enumerate(d_grid):
        for j, ev in enumerate(e_grid):
            buf.write(f"{dv:.9g},{ev:.9g},{vals[i, j]:.9g}\n")
    return buf.getvalue()


# --- calibration ---------------------------------------------------------

def calibrate(cfg: ExperimentConfig) -> dict:
    """Empirical mean excess delay and RMS spread of the channel sampler,
    checked against the target indoor statistics with 10% bands."""
    rng = np.random.default_rng([cfg.seed, 99])
    per_call = 4
    n_calls = int(np.ceil(cfg.calib_samples / per_call))
    chunks = [chansim.sample_excess_delays(cfg.sv, per_call, rng)
              for _ in range(n_calls)]
    delays = np.concatenate(chunks)[: cfg.calib_samples]
    mean = float(delays.mean())
    rms = float(delays.std())
    report = {
        "samples": int(delays.size),
        "mean_excess_s": mean,
        "rms_spread_s": rms,
        "mean_target_s": CAL_TARGET_MEAN,
        "rms_target_s": CAL_TARGET_RMS,
        "mean_ok": abs(mean - CAL_TARGET_MEAN) <= CAL_REL_BAND * CAL_TARGET_MEAN,
        "rms_ok": abs(rms - CAL_TARGET_RMS) <= CAL_REL_BAND * CAL_TARGET_RMS,
    }
    report["passed"] = report["mean_ok"] and report["rms_ok"]
    return report


def _calibrate_csv(report: dict) -> str:
    keys = ["samples", "mean_excess_s", "rms_spread_s", "mean_target_s",
            "rms_target_s", "mean_ok", "rms_ok", "passed"]
    return ",".join(keys) + "\n" + ",".join(str(report[k]) for k in keys) + "\n"


# --- CLI -----------------------------------------------------------------

def _parse_values(text: str) -> tuple:
    """Parse '1,2,3' or 'start:stop:count' into a tuple of floats."""
    text = text.strip()
    if ":" in text:
        lo, hi, n = text.split(":")
        return tuple(np.linspace(float(lo), float(hi), int(n)))
    return tuple(float(v) for v in text.split(","))


def _load_config_file(path: str) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"bad config line: {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = val
    return out


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uwbrel",
        description="Monte-Carlo evaluation of MPC-based distance/position estimators",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file; flags override it")
        p.add_argument("--d", default=None, help="distance(s) in m: 'a,b,c' or 'lo:hi:n'")
        p.add_argument("--sigma-ns", default=None, help="delay-difference error std dev [ns]")
        p.add_argument("--sigma-dir-deg", default=None,
                       help="direction error std dev(s) [deg]")
        p.add_argument("--observers", default=None, help="number of observers M")
        p.add_argument("--mpcs-per-observer", default=None,
                       help="MPC count(s) per observer")
        p.add_argument("--eps-ns", default=None, help="A-B clock offset [ns]")
        p.add_argument("--seed", default=None, help="base RNG seed")
        p.add_argument("--out", default=None, help="output path ('-' for stdout)")

    p_sweep = sub.add_parser("sweep", help="RMSE sweep")
    common(p_sweep)
    p_sweep.add_argument("--sweep", default=None,
                         choices=["distance", "direction_error", "mpc_count"])
    p_sweep.add_argument("--trials", default=None)
    p_sweep.add_argument("--trials-na", default=None,
                         help="trial cap for the permutation-sum estimator")
    p_sweep.add_argument("--estimators", default=None,
                         help=f"comma list of {','.join(ESTIMATOR_TAGS)}")
    p_sweep.add_argument("--cond-gate", default=None,
                         help="condition-number validity gate for position trials")

    p_surface = sub.add_parser("surface", help="likelihood surface dump")
    common(p_surface)
    p_surface.add_argument("--kind", default=None, choices=["known", "noassoc"])
    p_surface.add_argument("--scenario", default=None, choices=["canonical", "random"])
    p_surface.add_argument("--grid-steps", default=None)

    p_cal = sub.add_parser("calibrate", help="channel sampler statistics check")
    common(p_cal)
    p_cal.add_argument("--samples", default=None)

    p_dump = sub.add_parser("scenario-dump", help="sample one scenario as CSV")
    common(p_dump)

    return parser


def _merged(args, key: str, file_cfg: dict, default=None):
    val = getattr(args, key, None)
    if val is not None:
        return val
    return file_cfg.get(key, default)


def _config_from_args(args) -> ExperimentConfig:
    file_cfg = _load_config_file(args.config) if getattr(args, "config", None) else {}

    def get(key, default=None):
        return _merged(args, key, file_cfg, default)

    cfg = ExperimentConfig()
    updates: dict = {}
    if get("d") is not None:
        updates["d"] = _parse_values(str(get("d")))
    if get("sigma_ns") is not None:
        updates["sigma"] = float(get("sigma_ns")) * 1e-9
    if get("sigma_dir_deg") is not None:
        updates["sigma_dir"] = tuple(np.radians(v)
                                     for v in _parse_values(str(get("sigma_dir_deg"))))
    if get("observers") is not None:
        updates["m_observers"] = int(get("observers"))
    if get("mpcs_per_observer") is not None:
        updates["k_per_observer"] = tuple(int(v)
                                          for v in _parse_values(str(get("mpcs_per_observer"))))
    if get("eps_ns") is not None:
        updates["eps"] = float(get("eps_ns")) * 1e-9
    if get("seed") is not None:
        updates["seed"] = int(get("seed"))
    if get("out") is not None:
        updates["output_path"] = str(get("out"))
    if get("sweep") is not None:
        updates["sweep"] = str(get("sweep"))
    if get("trials") is not None:
        updates["trials"] = int(get("trials"))
    if get("trials_na") is not None:
        updates["trials_na"] = int(get("trials_na"))
    if get("estimators") is not None:
        updates["estimators"] = tuple(t.strip().upper()
                                      for t in str(get("estimators")).split(","))
    if get("cond_gate") is not None:
        updates["cond_gate"] = float(get("cond_gate"))
    if get("kind") is not None:
        updates["surface_kind"] = str(get("kind"))
    if get("scenario") is not None:
        updates["surface_scenario"] = str(get("scenario"))
    if get("grid_steps") is not None:
        updates["grid_steps"] = int(get("grid_steps"))
    if get("samples") is not None:
        updates["calib_samples"] = int(float(get("samples")))
    return replace(cfg, **updates)


def _emit(text: str, path: str) -> None:
    if path in ("-", "", None):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.command == "sweep":
            cfg.validate()
            result = run_sweep(cfg)
            _emit(result.to_csv(), cfg.output_path)
        elif args.command == "surface":
            cfg = replace(cfg, sweep="surface")
            _emit(dump_surface(cfg), cfg.output_path)
        elif args.command == "calibrate":
            cfg = replace(cfg, sweep="calibrate")
            report = calibrate(cfg)
            _emit(_calibrate_csv(report), cfg.output_path)
            if not report["passed"]:
                return 3
        elif args.command == "scenario-dump":
            scenario = chansim.sample_scenario(
                cfg.d[0], cfg.sv, cfg.m_observers,
                [cfg.k_per_observer[0]] * cfg.m_observers,
                np.random.default_rng([cfg.seed, 0]),
            )
            noise = chansim.NoiseParams(sigma=cfg.sigma, sigma_dir=cfg.sigma_dir[0],
                                        eps=cfg.eps)
            observations = chansim.observe(scenario, noise,
                                           np.random.default_rng([cfg.seed, 1]))
            _emit(chansim.scenario_csv(scenario, observations), cfg.output_path)
    except (ConfigError, InvalidParams, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
