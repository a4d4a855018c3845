"""Experiment configuration: YAML parsing with explicit schema validation."""

from dataclasses import dataclass, field

import yaml

from .errors import ConfigError
from .fom import burgers_problem, euler_problem
from .hyperreduction import parse_variant


def _require(mapping, key, typ, where, default=None, required=False):
    if key not in mapping or mapping[key] is None:
        if required:
            raise ConfigError(f"{where}: missing required key '{key}'")
        return default
    val = mapping[key]
    if typ is float and isinstance(val, int):
        val = float(val)
    if typ is not None and not isinstance(val, typ):
        raise ConfigError(f"{where}.{key}: expected {typ.__name__}, got {type(val).__name__}")
    return val


def _positive(value, where):
    if value <= 0:
        raise ConfigError(f"{where}: must be positive, got {value}")
    return value


@dataclass
class ExperimentConfig:
    problem_kind: str
    n_cells: int
    t_final: float
    dt_ref: float
    nu: float
    gamma: float
    bc: str
    ic: dict
    train_params: list
    test_params: list
    subsample: int
    r_rsvd: int
    oversampling: int
    basis_seed: int
    latent_dim: int
    hidden: tuple
    epochs: int
    batch_size: int
    learning_rate: float
    validation_fraction: float
    train_seed: int
    variant: str
    r_h: int
    ecsw_tolerance: float
    residual_basis_rank: int
    dt_multiplier: float
    max_iterations: int
    abs_tol: float
    rel_tol: float
    on_failure: str
    seed: int
    output_dir: str
    mode: str = "C"
    scheme: str = "deim"
    update_period: int = None
    extras: dict = field(default_factory=dict)

    def make_problem(self):
        if self.problem_kind == "burgers":
            kwargs = dict(n_cells=self.n_cells, nu=self.nu, t_final=self.t_final,
                          dt_ref=self.dt_ref, bc=self.bc)
            kwargs.update(self.ic)
            return burgers_problem(**kwargs)
        kwargs = dict(n_cells=self.n_cells, gamma=self.gamma, t_final=self.t_final,
                      dt_ref=self.dt_ref)
        kwargs.update(self.ic)
        return euler_problem(**kwargs)

    @property
    def dt_rom(self):
        return self.dt_ref * self.dt_multiplier


def load_config(path, overrides=None):
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    if overrides:
        for dotted, value in overrides.items():
            node = raw
            *parents, leaf = dotted.split(".")
            for p in parents:
                node = node.setdefault(p, {})
            node[leaf] = value
    return parse_config(raw)


def parse_config(raw):
    prob = _require(raw, "problem", dict, "config", required=True)
    kind = _require(prob, "kind", str, "problem", required=True)
    if kind not in ("burgers", "euler1d"):
        raise ConfigError(f"problem.kind: unknown kind {kind!r}")
    n_cells = _positive(_require(prob, "n_cells", int, "problem", default=200), "problem.n_cells")
    t_final = _positive(_require(prob, "t_final", float, "problem",
                                 default=0.5 if kind == "burgers" else 0.15), "problem.t_final")
    dt_ref = _require(prob, "dt_ref", float, "problem")
    if dt_ref is None:
        dt_ref = t_final / (1600 if kind == "burgers" else 200)
    _positive(dt_ref, "problem.dt_ref")
    nu = _require(prob, "nu", float, "problem", default=2e-3)
    gamma = _require(prob, "gamma", float, "problem", default=7.0 / 5.0)
    bc = _require(prob, "bc", str, "problem", default="inflow_outflow")
    ic = _require(prob, "ic", dict, "problem", default={})

    pars = _require(raw, "parameters", dict, "config", required=True)
    train = _require(pars, "train", list, "parameters", required=True)
    test = _require(pars, "test", list, "parameters", default=[])
    train = [float(v) for v in train]
    test = [float(v) for v in test]
    if not train:
        raise ConfigError("parameters.train: need at least one training parameter")
    if set(train) & set(test):
        raise ConfigError("parameters: train and test sets must be disjoint")

    snaps = _require(raw, "snapshots", dict, "config", default={})
    subsample = _positive(_require(snaps, "subsample", int, "snapshots", default=1),
                          "snapshots.subsample")

    seed = _require(raw, "seed", int, "config", default=0)

    bas = _require(raw, "basis", dict, "config", default={})
    r_rsvd = _positive(_require(bas, "r_rsvd", int, "basis", default=20), "basis.r_rsvd")
    oversampling = _require(bas, "oversampling", int, "basis", default=10)
    basis_seed = _require(bas, "seed", int, "basis", default=seed)

    ae = _require(raw, "autoencoder", dict, "config", default={})
    latent = _positive(_require(ae, "latent_dim", int, "autoencoder", default=4),
                       "autoencoder.latent_dim")
    hidden = tuple(_require(ae, "hidden", list, "autoencoder",
                            default=[32, 32, 32, 32, 32]))
    epochs = _positive(_require(ae, "epochs", int, "autoencoder", default=3000),
                       "autoencoder.epochs")
    batch = _positive(_require(ae, "batch_size", int, "autoencoder", default=64),
                      "autoencoder.batch_size")
    lr = _positive(_require(ae, "learning_rate", float, "autoencoder", default=1e-3),
                   "autoencoder.learning_rate")
    val_frac = _require(ae, "validation_fraction", float, "autoencoder", default=0.1)
    if not 0.0 <= val_frac < 1.0:
        raise ConfigError("autoencoder.validation_fraction must lie in [0, 1)")
    train_seed = _require(ae, "seed", int, "autoencoder", default=seed)

    hyp = _require(raw, "hyper_reduction", dict, "config", default={})
    variant = _require(hyp, "variant", str, "hyper_reduction", default="C-UP50")
    try:
        mode, scheme, period = parse_variant(variant)
    except Exception as exc:
        raise ConfigError(f"hyper_reduction.variant: {exc}")
    r_h = _positive(_require(hyp, "r_h", int, "hyper_reduction", default=20),
                    "hyper_reduction.r_h")
    ecsw_tol = _require(hyp, "ecsw_tolerance", float, "hyper_reduction", default=1e-3)
    rb_rank = _require(hyp, "residual_basis_rank", int, "hyper_reduction",
                       default=r_rsvd)

    romc = _require(raw, "rom", dict, "config", default={})
    dt_mult = _positive(_require(romc, "dt_multiplier", float, "rom", default=1.0),
                        "rom.dt_multiplier")
    max_it = _positive(_require(romc, "max_iterations", int, "rom", default=30),
                       "rom.max_iterations")
    abs_tol = _positive(_require(romc, "abs_tol", float, "rom", default=1e-9),
                        "rom.abs_tol")
    rel_tol = _positive(_require(romc, "rel_tol", float, "rom", default=1e-8),
                        "rom.rel_tol")
    on_failure = _require(romc, "on_failure", str, "rom", default="accept")
    if on_failure not in ("abort", "accept"):
        raise ConfigError("rom.on_failure must be 'abort' or 'accept'")

    outdir = _require(raw, "output_dir", str, "config", default="out")

    known = {"problem", "parameters", "snapshots", "basis", "autoencoder",
             "hyper_reduction", "rom", "seed", "output_dir"}
    extras = {k: v for k, v in raw.items() if k not in known}
    if extras:
        raise ConfigError(f"config: unknown top-level keys {sorted(extras)}")

    return ExperimentConfig(
        problem_kind=kind, n_cells=n_cells, t_final=t_final, dt_ref=dt_ref,
        nu=nu, gamma=gamma, bc=bc, ic=ic, train_params=train, test_params=test,
        subsample=subsample, r_rsvd=r_rsvd, oversampling=oversampling,
        basis_seed=basis_seed, latent_dim=latent, hidden=hidden, epochs=epochs,
        batch_size=batch, learning_rate=lr, validation_fraction=val_frac,
        train_seed=train_seed, variant=variant, r_h=r_h, ecsw_tolerance=ecsw_tol,
        residual_basis_rank=rb_rank, dt_multiplier=dt_mult, max_iterations=max_it,
        abs_tol=abs_tol, rel_tol=rel_tol, on_failure=on_failure, seed=seed,
        output_dir=outdir, mode=mode, scheme=scheme, update_period=period)
