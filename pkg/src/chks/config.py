"""INI run configuration, initial-condition presets and the seeded PRNG."""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coefficients import Beta, HSpec, ModelParams, Mobility, validate
from .diagnostics import Subvolume
from .errors import ConfigError
from .grid import Grid
from .potentials import PotentialSpec
from .stepper import Mode, SchemeConfig

MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)


def splitmix64(seed: int, count: int) -> np.ndarray:
    """First ``count`` outputs of the splitmix64 generator started at ``seed``."""
    with np.errstate(over="ignore"):
        k = np.arange(1, count + 1, dtype=np.uint64)
        z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + k * GOLDEN_GAMMA
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def uniform01(seed: int, count: int) -> np.ndarray:
    """Doubles in [0, 1) from the top 53 bits of splitmix64 outputs."""
    return (splitmix64(seed, count) >> np.uint64(11)).astype(np.float64) * 2.0**-53


# ----------------------------------------------------------------------
# initial-condition presets

_PRESET = re.compile(r"^\s*([A-Za-z]\w*)\s*(?:\((.*)\))?\s*$")

PRESETS = {
    "uniform": {"value": None},
    "cosineBump": {"mean": None, "amplitude": None, "kx": 1.0, "ky": 0.0},
    "randomPerturbed": {"mean": None, "amplitude": None, "seed": None},
    "tumorSeed": {"radius": None, "width": None, "inside": 0.9, "outside": -0.9, "cx": None, "cy": None},
}


def parse_preset(text: str):
    m = _PRESET.match(text)
    if not m:
        raise ConfigError(f"cannot parse initial-condition preset {text!r}")
    name, body = m.group(1), m.group(2) or ""
    if name not in PRESETS:
        raise ConfigError(f"unknown initial-condition preset {name!r}; expected one of {sorted(PRESETS)}")
    args = {}
    for part in filter(None, (p.strip() for p in body.split(","))):
        if "=" not in part:
            raise ConfigError(f"preset argument {part!r} must be key=value")
        k, v = (s.strip() for s in part.split("=", 1))
        if k not in PRESETS[name]:
            raise ConfigError(f"preset {name} has no argument {k!r}")
        try:
            args[k] = float(v)
        except ValueError:
            raise ConfigError(f"preset argument {k} = {v!r} is not a number") from None
    spec = dict(PRESETS[name])
    spec.update(args)
    missing = [k for k, v in spec.items() if v is None and k not in ("seed", "cx", "cy")]
    if missing:
        raise ConfigError(f"preset {name} needs argument(s) {', '.join(missing)}")
    return name, spec


def build_field(grid: Grid, text: str, seed: int = 0) -> np.ndarray:
    name, a = parse_preset(text)
    coords = grid.centers()
    x = coords[0]
    y = coords[1] if grid.dim == 2 else 0.0
    shape = grid.shape
    if name == "uniform":
        return np.full(shape, a["value"])
    if name == "cosineBump":
        v = np.cos(a["kx"] * np.pi * x / grid.lx)
        if grid.dim == 2:
            v = v * np.cos(a["ky"] * np.pi * y / grid.ly)
        return a["mean"] + a["amplitude"] * v
    if name == "randomPerturbed":
        s = int(a["seed"]) if a["seed"] is not None else seed
        u = uniform01(s, grid.size).reshape(shape)
        return a["mean"] + a["amplitude"] * (2.0 * u - 1.0)
    cx = grid.lx / 2 if a["cx"] is None else a["cx"]
    cy = grid.ly / 2 if a["cy"] is None else a["cy"]
    r = np.abs(x - cx) if grid.dim == 1 else np.hypot(x - cx, y - cy)
    w = 0.5 * (1.0 - np.tanh((r - a["radius"]) / a["width"]))
    return a["outside"] + (a["inside"] - a["outside"]) * w


def _cell(i, shape):
    return tuple(int(k) for k in np.unravel_index(i, shape))


def check_initial_data(grid: Grid, phi0, sigma0, singular: bool) -> list:
    errors = []
    mean = grid.mean(phi0)
    if not -1.0 < mean < 1.0:
        errors.append(f"initial data: mean of phi0 = {mean:g} must lie in the open interval (-1, 1)")
    if singular:
        a = np.abs(phi0)
        i = int(np.argmax(a))
        if not a.flat[i] < 1.0:
            errors.append(
                f"initial data: |phi0| must be < 1 at every cell for a singular potential "
                f"(max |phi0| = {a.flat[i]:g} at cell {_cell(i, grid.shape)})"
            )
    i = int(np.argmin(sigma0))
    if sigma0.flat[i] < 0:
        errors.append(
            f"initial data: sigma0 must be >= 0 (min sigma0 = {sigma0.flat[i]:g} "
            f"at cell {_cell(i, grid.shape)})"
        )
    return errors


# ----------------------------------------------------------------------
# mobility descriptors: constant(1.0) or rational(m0=.., M=.., a=..)


def parse_mobility(text: str) -> Mobility:
    m = _PRESET.match(text)
    if not m:
        raise ConfigError(f"cannot parse mobility {text!r}")
    name, body = m.group(1), (m.group(2) or "").strip()
    try:
        if name == "constant":
            body = body.split("=", 1)[-1] if body else "1"
            return Mobility("constant", value=float(body))
        if name == "rational":
            kw = {}
            for part in filter(None, (p.strip() for p in body.split(","))):
                k, v = (s.strip() for s in part.split("=", 1))
                if k not in ("m0", "M", "a"):
                    raise ConfigError(f"rational mobility has no argument {k!r}")
                kw[k] = float(v)
            return Mobility("rational", **kw)
    except ValueError:
        raise ConfigError(f"cannot parse mobility {text!r}") from None
    raise ConfigError(f"unknown mobility shape {name!r}; expected constant or rational")


def _floats(text):
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


# ----------------------------------------------------------------------


@dataclass
class RunConfig:
    grid: Grid
    spec: PotentialSpec
    params: ModelParams
    scheme: SchemeConfig
    t_end: float
    phi_ic: str
    sigma_ic: str
    seed: int = 0
    strict3d: bool = False
    csv: str = "diagnostics.csv"
    snapshot_every: int = 0
    snapshot_formats: tuple = ()
    subvolume: Subvolume | None = None
    n_list: tuple = ()
    twin_perturb: str | None = None
    raw: dict = field(default_factory=dict)

    @property
    def n_steps(self):
        return int(round(self.t_end / self.scheme.dt))

    def initial_fields(self):
        phi0 = build_field(self.grid, self.phi_ic, self.seed)
        sigma0 = build_field(self.grid, self.sigma_ic, self.seed)
        return phi0, sigma0


DEFAULTS = {
    "grid": {"dim": "2", "nx": "64", "ny": "64", "lx": "1.0", "ly": "1.0"},
    "potential": {"kind": "floryHuggins", "lambda": "0.0", "n": ""},
    "params": {
        "chi": "1.0", "eps": "1.0", "m": "0.0", "h": "0.0", "hPhi": "", "hSigma": "", "hTable": "",
        "kappa0": "1.0", "kappaInf": "1.0", "p": "2.0", "betaB": "1.0", "betaB0": "",
        "mobM": "constant(1.0)", "mobN": "constant(1.0)", "strict3d": "false",
    },
    "scheme": {
        "dt": "1e-3", "tEnd": "0.1", "mode": "full", "n": "", "newtonTol": "1e-10",
        "newtonMaxIter": "50", "linTol": "1e-6", "thetaCross": "0.0", "maxHalvings": "5",
    },
    "ic": {"phi": "uniform(value=0.0)", "sigma": "uniform(value=1.0)", "seed": "0"},
    "output": {"csv": "diagnostics.csv", "snapshotEvery": "0", "snapshotFormat": "none", "subvolume": ""},
    "nconv": {"nList": "4,8,16"},
    "twin": {"perturb": ""},
}


def read_config(path=None, overrides=(), text=None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str
    cp.read_dict(DEFAULTS)
    try:
        if text is not None:
            cp.read_string(text)
        elif path is not None:
            if not Path(path).is_file():
                raise ConfigError(f"config file not found: {path}")
            cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from None
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        key, value = item.split("=", 1)
        section, opt = key.strip().split(".", 1)
        if section not in DEFAULTS:
            raise ConfigError(f"override names unknown section {section!r}")
        cp.set(section, opt.strip(), value.strip())
    for section in cp.sections():
        known = DEFAULTS.get(section)
        if known is None:
            raise ConfigError(f"unknown config section [{section}]")
        for key in cp[section]:
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
    return cp


def _get(cp, section, key, conv, name=None):
    raw = cp.get(section, key)
    try:
        return conv(raw)
    except (ValueError, TypeError):
        raise ConfigError(f"{section}.{key} = {raw!r} is not a valid {name or conv.__name__}") from None


def _opt_int(s):
    return int(s) if s.strip() else None


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(s)


def parse_config(cp: configparser.ConfigParser, seed: int | None = None) -> RunConfig:
    """Turn parsed INI text into a RunConfig; raises ConfigError with the full report."""
    dim = _get(cp, "grid", "dim", int, "integer")
    try:
        grid = Grid(dim, _get(cp, "grid", "nx", int, "integer"),
                    _get(cp, "grid", "ny", int, "integer") if dim == 2 else 1,
                    _get(cp, "grid", "lx", float, "number"), _get(cp, "grid", "ly", float, "number"))
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from None

    try:
        spec = PotentialSpec(cp.get("potential", "kind"), _get(cp, "potential", "lambda", float, "number"),
                             _get(cp, "potential", "n", _opt_int, "integer"))
    except ValueError as exc:
        raise ConfigError(f"potential: {exc}") from None

    pr = cp["params"]
    if pr["hTable"].strip():
        try:
            pn, sn = _floats(pr["hPhi"]), _floats(pr["hSigma"])
            vals = np.array(_floats(pr["hTable"])).reshape(len(pn), len(sn))
            h = HSpec(phi_nodes=pn, sigma_nodes=sn, table=tuple(map(tuple, vals)))
        except ValueError as exc:
            raise ConfigError(f"params: h table: {exc}") from None
    else:
        h = HSpec(_get(cp, "params", "h", float, "number"))
    b0 = pr["betaB0"].strip()
    params = ModelParams(
        chi=_get(cp, "params", "chi", float, "number"),
        eps=_get(cp, "params", "eps", float, "number"),
        m=_get(cp, "params", "m", float, "number"),
        h=h,
        kappa0=_get(cp, "params", "kappa0", float, "number"),
        kappa_inf=_get(cp, "params", "kappaInf", float, "number"),
        p=_get(cp, "params", "p", float, "number"),
        beta=Beta(_get(cp, "params", "betaB", float, "number"), float(b0) if b0 else None),
        mob_m=parse_mobility(pr["mobM"]),
        mob_n=parse_mobility(pr["mobN"]),
    )
    strict3d = _get(cp, "params", "strict3d", _bool, "boolean")

    mode = cp.get("scheme", "mode").strip()
    if mode not in {m.value for m in Mode}:
        raise ConfigError(f"scheme.mode = {mode!r} must be one of full, sourceless, old, approx")
    try:
        scheme = SchemeConfig(
            dt=_get(cp, "scheme", "dt", float, "number"),
            mode=mode,
            n=_get(cp, "scheme", "n", _opt_int, "integer"),
            newton_tol=_get(cp, "scheme", "newtonTol", float, "number"),
            newton_max_iter=_get(cp, "scheme", "newtonMaxIter", int, "integer"),
            lin_tol=_get(cp, "scheme", "linTol", float, "number"),
            theta_cross=_get(cp, "scheme", "thetaCross", float, "number"),
            max_halvings=_get(cp, "scheme", "maxHalvings", int, "integer"),
        )
    except ValueError as exc:
        raise ConfigError(f"scheme: {exc}") from None
    t_end = _get(cp, "scheme", "tEnd", float, "number")
    if not t_end >= 0:
        raise ConfigError(f"scheme.tEnd = {t_end:g} must be >= 0")

    out = cp["output"]
    fmt = tuple(f.strip() for f in out["snapshotFormat"].split(",") if f.strip() and f.strip() != "none")
    for f in fmt:
        if f not in ("pgm", "raw"):
            raise ConfigError(f"output.snapshotFormat entry {f!r} must be pgm, raw or none")
    sub = None
    if out["subvolume"].strip():
        box = _floats(out["subvolume"])
        try:
            sub = Subvolume.from_box(grid, *box)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"output.subvolume: {exc}") from None
    n_list = tuple(int(v) for v in cp.get("nconv", "nList").replace(";", ",").split(",") if v.strip())
    perturb = cp.get("twin", "perturb").strip() or None

    cfg = RunConfig(
        grid=grid, spec=spec, params=params, scheme=scheme, t_end=t_end,
        phi_ic=cp.get("ic", "phi"), sigma_ic=cp.get("ic", "sigma"),
        seed=seed if seed is not None else _get(cp, "ic", "seed", int, "integer"),
        strict3d=strict3d, csv=out["csv"], snapshot_every=_get(cp, "output", "snapshotEvery", int, "integer"),
        snapshot_formats=fmt, subvolume=sub, n_list=n_list, twin_perturb=perturb,
        raw={s: dict(cp[s]) for s in cp.sections()},
    )
    errors = list(validate(params, 3 if strict3d else grid.dim, strict3d).errors)
    phi0, sigma0 = cfg.initial_fields()
    errors += check_initial_data(grid, phi0, sigma0, spec.singular and scheme.mode is not Mode.APPROX)
    if errors:
        raise ConfigError("\n".join(errors))
    return cfg


def load(path=None, overrides=(), seed=None, text=None) -> RunConfig:
    return parse_config(read_config(path, overrides, text), seed)
