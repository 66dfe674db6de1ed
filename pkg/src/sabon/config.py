"""Sectioned plain-text experiment configuration.

Grammar (see README): ``[section]`` headers, ``key = value`` entries,
``#`` comments, blank lines ignored.  Every key is schema-typed; unknown
sections or keys are rejected so that typos fail loudly.  The canonical
rendering (sorted sections/keys, explicit values) is what gets hashed
into manifests.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from . import trainer
from .artifacts import sha256_text
from .dynamics import CircleRotation, ConjugatedCat, PerturbedCat


class ConfigError(ValueError):
    """Malformed, mistyped, or unknown configuration input."""


SCHEMA_VERSION = 1

# section -> key -> (type tag, default)
SCHEMA = {
    "experiment": {
        "schema_version": ("int", SCHEMA_VERSION),
        "name": ("str", "experiment"),
        "map": ("str", "circle_rotation"),
        "alpha": ("float", -1.0),
        "delta": ("float", 0.01),
        "conj_a": ("float", 0.1),
        "conj_b": ("float", 0.1),
        "seed": ("int", 0),
        "out_dir": ("str", "runs/experiment"),
    },
    "grid": {
        "points_per_side": ("int", 100),
    },
    "data": {
        "train_size": ("int", 1000),
        "validation_size": ("int", 500),
        "test_size": ("int", 100),
        "max_order": ("int", 9),
        "transfer_steps": ("int", 0),
    },
    "model": {
        "hidden_layers": ("int", 5),
        "hidden_width": ("int", 512),
        "num_basis": ("int", 19),
        "beta1": ("float", 1.0),
        "beta2": ("float", 0.0),
        "beta3": ("float", 1.0),
        "beta_p1": ("float", 0.0),
        "precision": ("str", "single"),
    },
    "training": {
        "epochs": ("int", 3000),
        "learning_rate": ("float", 1e-3),
        "batch_size": ("int", 100),
        "validation_every": ("int", 50),
        "cosine_decay": ("bool", False),
        "sparsity_warmup": ("float", 0.0),
    },
    "spectral": {
        "dump_eigenfunctions": ("int", 8),
    },
    "baseline": {
        "fourier_per_dim": ("int", 18),
        "quad_points_per_side": ("int", 400),
        "srb_modes_per_side": ("int", 100),
    },
}

MAP_KINDS = ("circle_rotation", "perturbed_cat", "conjugated_cat")


def _convert(raw, type_tag, where):
    try:
        if type_tag == "int":
            return int(raw)
        if type_tag == "float":
            return float(raw)
        if type_tag == "bool":
            lowered = raw.strip().lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type_tag}") from exc


def parse_config_text(text):
    values = {section: dict() for section in SCHEMA}
    section = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside of any [section]")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")
        if key in values[section]:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} in [{section}]")
        values[section][key] = _convert(raw, SCHEMA[section][key][0], f"line {lineno}")
    merged = {
        section: {key: values[section].get(key, default) for key, (_, default) in keys.items()}
        for section, keys in SCHEMA.items()
    }
    if merged["experiment"]["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version {merged['experiment']['schema_version']} unsupported "
            f"(expected {SCHEMA_VERSION})"
        )
    if merged["experiment"]["map"] not in MAP_KINDS:
        raise ConfigError(f"map must be one of {MAP_KINDS}")
    if merged["model"]["precision"] not in ("single", "double"):
        raise ConfigError("precision must be 'single' or 'double'")
    return merged


@dataclass
class ExperimentConfig:
    sections: dict

    @classmethod
    def from_file(cls, path):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        return cls(sections=parse_config_text(text))

    @classmethod
    def from_text(cls, text):
        return cls(sections=parse_config_text(text))

    def override(self, section, key, value):
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown override [{section}] {key}")
        self.sections[section][key] = value

    def get(self, section, key):
        return self.sections[section][key]

    def canonical_text(self):
        lines = []
        for section in sorted(self.sections):
            lines.append(f"[{section}]")
            for key in sorted(self.sections[section]):
                lines.append(f"{key} = {self.sections[section][key]}")
        return "\n".join(lines) + "\n"

    def config_hash(self):
        return sha256_text(self.canonical_text())

    def map_descriptor(self):
        exp = self.sections["experiment"]
        if exp["map"] == "circle_rotation":
            return CircleRotation(exp["alpha"])
        if exp["map"] == "perturbed_cat":
            return PerturbedCat(exp["delta"])
        return ConjugatedCat(exp["delta"], exp["conj_a"], exp["conj_b"])

    def train_config(self):
        exp, data, model, training = (
            self.sections["experiment"],
            self.sections["data"],
            self.sections["model"],
            self.sections["training"],
        )
        return trainer.TrainConfig(
            map=self.map_descriptor(),
            grid_m=self.sections["grid"]["points_per_side"],
            train_size=data["train_size"],
            validation_size=data["validation_size"],
            test_size=data["test_size"],
            max_order=data["max_order"],
            hidden_layers=model["hidden_layers"],
            hidden_width=model["hidden_width"],
            n_basis=model["num_basis"],
            beta1=model["beta1"],
            beta2=model["beta2"],
            beta3=model["beta3"],
            beta_p1=model["beta_p1"],
            transfer_steps=data["transfer_steps"],
            epochs=training["epochs"],
            learning_rate=training["learning_rate"],
            batch_size=training["batch_size"],
            validation_every=training["validation_every"],
            cosine_decay=training["cosine_decay"],
            sparsity_warmup=training["sparsity_warmup"],
            precision=model["precision"],
            seed=exp["seed"],
        )


def config_from_train(cfg, name="experiment", out_dir="runs/experiment"):
    """Render a TrainConfig back into an ExperimentConfig (for presets)."""
    ec = ExperimentConfig(sections=parse_config_text(""))
    exp = ec.sections["experiment"]
    exp["name"] = name
    exp["out_dir"] = out_dir
    exp["seed"] = cfg.seed
    if isinstance(cfg.map, CircleRotation):
        exp["map"] = "circle_rotation"
        exp["alpha"] = cfg.map.alpha
    elif isinstance(cfg.map, PerturbedCat):
        exp["map"] = "perturbed_cat"
        exp["delta"] = cfg.map.delta
    else:
        exp["map"] = "conjugated_cat"
        exp["delta"] = cfg.map.delta
        exp["conj_a"] = cfg.map.a
        exp["conj_b"] = cfg.map.b
    ec.sections["grid"]["points_per_side"] = cfg.grid_m
    data = ec.sections["data"]
    data.update(
        train_size=cfg.train_size,
        validation_size=cfg.validation_size,
        test_size=cfg.test_size,
        max_order=cfg.max_order,
        transfer_steps=cfg.transfer_steps,
    )
    model = ec.sections["model"]
    model.update(
        hidden_layers=cfg.hidden_layers,
        hidden_width=cfg.hidden_width,
        num_basis=cfg.n_basis,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        beta3=cfg.beta3,
        beta_p1=cfg.beta_p1,
        precision=cfg.precision,
    )
    training = ec.sections["training"]
    training.update(
        epochs=cfg.epochs,
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        validation_every=cfg.validation_every,
        cosine_decay=cfg.cosine_decay,
        sparsity_warmup=cfg.sparsity_warmup,
    )
    return ec
