"""Strict parsing of experiment configuration files.

The format is one ``key = value`` per line with ``#`` comments, dotted
keys for nesting, and string / number / boolean values.  Parsing is
strict: unknown keys, duplicate keys, type mismatches and missing
required keys are hard errors that name the offending line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

KINDS = ("stability", "contraction", "picard", "chaos", "distances", "validate")

_SIM_KINDS = ("stability", "contraction", "picard", "chaos")
_COEFF_KINDS = ("stability", "contraction", "picard", "chaos", "validate")
_INIT_KINDS = ("stability", "contraction", "picard", "chaos")

_KEY_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*$")


class ConfigError(ValueError):
    """A configuration file failed strict validation."""


@dataclass(frozen=True)
class KeySpec:
    type: str                      # "int" | "float" | "bool" | "str"
    kinds: tuple[str, ...]         # experiment kinds the key applies to
    default: object = None
    required: bool = False


SCHEMA: dict[str, KeySpec] = {
    "kind": KeySpec("str", KINDS),
    "seed": KeySpec("int", KINDS, required=True),
    "out_dir": KeySpec("str", KINDS),
    "plots": KeySpec("bool", KINDS, default=True),

    "n_paths": KeySpec("int", _SIM_KINDS, required=True),
    "grid.t_end": KeySpec("float", _SIM_KINDS, required=True),
    "grid.n_steps": KeySpec("int", _SIM_KINDS, required=True),
    "theta": KeySpec("float", _SIM_KINDS, default=1.0),
    "metric": KeySpec("str", ("stability", "picard", "chaos"), default="rho_tilde"),
    "tol": KeySpec("float", ("stability", "picard", "chaos"), default=0.02),
    "max_iter": KeySpec("int", ("stability", "picard", "chaos"), default=25),
    "windowed": KeySpec("bool", ("stability", "picard", "chaos"), default=False),
    "binning.max_bins": KeySpec("int", _SIM_KINDS + ("distances",), default=512),
    "binning.bin_width": KeySpec("float", _SIM_KINDS + ("distances",)),

    "coeffs.preset": KeySpec("str", _COEFF_KINDS, required=True),
    "coeffs.rate": KeySpec("float", _COEFF_KINDS),
    "coeffs.coupling": KeySpec("str", _COEFF_KINDS),
    "coeffs.bound": KeySpec("float", _COEFF_KINDS),
    "coeffs.sigma": KeySpec("float", _COEFF_KINDS),
    "coeffs.phi": KeySpec("str", _COEFF_KINDS),
    "coeffs.gain": KeySpec("float", _COEFF_KINDS),
    "coeffs.ref_point": KeySpec("float", _COEFF_KINDS),
    "coeffs.theta": KeySpec("float", _COEFF_KINDS),
    "coeffs.dim": KeySpec("int", _COEFF_KINDS),

    "init.kind": KeySpec("str", _INIT_KINDS, default="gaussian"),
    "init.mean": KeySpec("float", _INIT_KINDS, default=0.0),
    "init.std": KeySpec("float", _INIT_KINDS, default=1.0),
    "init.point": KeySpec("float", _INIT_KINDS, default=0.0),
    "init_b.kind": KeySpec("str", ("stability",), default="gaussian"),
    "init_b.mean": KeySpec("float", ("stability",), default=0.0),
    "init_b.std": KeySpec("float", ("stability",), default=1.0),
    "init_b.point": KeySpec("float", ("stability",), default=0.0),

    "stability.allowance": KeySpec("float", ("stability",), default=0.01),

    "flows.kind": KeySpec("str", ("contraction",), default="two_atom"),
    "flows.atom0": KeySpec("float", ("contraction",), default=0.0),
    "flows.atom1": KeySpec("float", ("contraction",), default=1.0),
    "flows.n_atoms": KeySpec("int", ("contraction",), default=512),
    "flows.a.wstart": KeySpec("float", ("contraction",), default=0.1),
    "flows.a.wend": KeySpec("float", ("contraction",), default=0.4),
    "flows.b.wstart": KeySpec("float", ("contraction",), default=0.6),
    "flows.b.wend": KeySpec("float", ("contraction",), default=0.9),
    "flows.a.mean0": KeySpec("float", ("contraction",), default=0.0),
    "flows.a.slope": KeySpec("float", ("contraction",), default=0.0),
    "flows.a.std": KeySpec("float", ("contraction",), default=1.0),
    "flows.b.mean0": KeySpec("float", ("contraction",), default=0.5),
    "flows.b.slope": KeySpec("float", ("contraction",), default=0.0),
    "flows.b.std": KeySpec("float", ("contraction",), default=1.0),
    "contraction.allowance": KeySpec("float", ("contraction",), default=0.01),

    "picard.export_flow": KeySpec("bool", ("picard",), default=False),

    "chaos.particle_counts": KeySpec("str", ("chaos",), default="100,1000,10000"),

    "distances.n_cases": KeySpec("int", ("distances",), default=100),

    "validate.probes": KeySpec("int", ("validate",), default=200),
}


@dataclass
class ExperimentConfig:
    """A fully resolved experiment configuration (defaults filled in).

    ``values`` maps every schema key valid for the kind to its resolved
    value; attribute-style helpers pull out the common fields.
    """

    kind: str
    values: dict[str, object]
    source_path: str = ""
    _lines: dict[str, int] = field(default_factory=dict, repr=False)

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def group(self, prefix: str) -> dict[str, object]:
        """Sub-dictionary of keys under ``prefix.``, with set values only."""
        head = prefix + "."
        return {k[len(head):]: v for k, v in self.values.items()
                if k.startswith(head) and v is not None}

    @property
    def seed(self) -> int:
        return self.values["seed"]

    @property
    def out_dir(self) -> str | None:
        return self.values.get("out_dir")


def _parse_scalar(token: str, line_no: int):
    if token.startswith('"'):
        if len(token) < 2 or not token.endswith('"'):
            raise ConfigError(f"unterminated string (line {line_no})")
        return token[1:-1]
    if token == "true":
        return True
    if token == "false":
        return False
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        pass
    return token  # bare string


def _strip_comment(line: str) -> str:
    out = []
    quoted = False
    for ch in line:
        if ch == '"':
            quoted = not quoted
        if ch == "#" and not quoted:
            break
        out.append(ch)
    return "".join(out)


def _read_pairs(path: str) -> dict[str, tuple[object, int]]:
    pairs: dict[str, tuple[object, int]] = {}
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = _strip_comment(raw).strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"expected 'key = value' (line {line_no})")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if not _KEY_RE.match(key):
                raise ConfigError(f"invalid key {key!r} (line {line_no})")
            if not value:
                raise ConfigError(f"missing value for {key!r} (line {line_no})")
            if key in pairs:
                raise ConfigError(
                    f"duplicate key {key!r} (line {line_no}; first set on line "
                    f"{pairs[key][1]})")
            pairs[key] = (_parse_scalar(value, line_no), line_no)
    return pairs


def _check_type(key: str, value: object, spec: KeySpec, line_no: int):
    kind_names = {"int": "integer", "float": "number", "bool": "boolean", "str": "string"}
    ok: bool
    if spec.type == "int":
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif spec.type == "float":
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if ok:
            value = float(value)
    elif spec.type == "bool":
        ok = isinstance(value, bool)
    else:
        ok = isinstance(value, str)
    if not ok:
        raise ConfigError(
            f"type mismatch for {key!r} (line {line_no}): expected "
            f"{kind_names[spec.type]}, got {value!r}")
    return value


def parse_config(path: str, kind: str | None = None) -> ExperimentConfig:
    """Parse and validate a configuration file.

    ``kind`` (usually the CLI subcommand) selects which schema keys are
    legal; a ``kind`` key inside the file must agree with it.
    """
    pairs = _read_pairs(path)

    file_kind = pairs.get("kind", (None, 0))[0]
    if file_kind is not None and file_kind not in KINDS:
        raise ConfigError(
            f"unknown experiment kind {file_kind!r} (line {pairs['kind'][1]}); "
            f"choices: {KINDS}")
    if kind is None:
        kind = file_kind
    if kind is None:
        raise ConfigError("experiment kind not given (no subcommand and no 'kind' key)")
    if file_kind is not None and file_kind != kind:
        raise ConfigError(
            f"config declares kind {file_kind!r} but {kind!r} was requested "
            f"(line {pairs['kind'][1]})")

    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    for key, (value, line_no) in pairs.items():
        if key == "kind":
            continue
        spec = SCHEMA.get(key)
        if spec is None or kind not in spec.kinds:
            raise ConfigError(f"unknown key {key!r} for {kind} (line {line_no})")
        values[key] = _check_type(key, value, spec, line_no)
        lines[key] = line_no

    for key, spec in SCHEMA.items():
        if key == "kind" or kind not in spec.kinds or key in values:
            continue
        if spec.required:
            raise ConfigError(f"missing required key {key!r} for {kind}")
        values[key] = spec.default

    values["kind"] = kind
    return ExperimentConfig(kind=kind, values=values, source_path=path, _lines=lines)


def parse_int_list(text: str, key: str) -> list[int]:
    """Comma-separated integers (used for ladder parameters)."""
    try:
        items = [int(tok.strip()) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"{key} must be a comma-separated integer list, got {text!r}")
    if not items:
        raise ConfigError(f"{key} must list at least one integer")
    return items
