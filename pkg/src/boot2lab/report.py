"""Run manifests and bit-stable JSON/CSV report serialization.

Floats are written with 17 significant digits so every value survives a
text round trip exactly. Non-finite values use the JSON extensions Python's
json module reads back (NaN, Infinity).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

from boot2lab import __version__
from boot2lab.sampling import RNG_ALGORITHM
from boot2lab.toy_model import ToyConfig

SUBCOMMANDS = ("analytic", "single", "replicate", "conditional", "dependence", "scaling", "fixes")
FORMATS = ("json", "csv")


@dataclass(frozen=True)
class RunManifest:
    subcommand: str
    config: ToyConfig = field(default_factory=ToyConfig)
    seed: int = 0
    output_format: str = "json"
    output_path: str | None = None
    r: int | None = None
    b: int | None = None
    m_values: tuple[int, ...] | None = None
    datasets: int | None = None
    bias_correct: bool = False
    preset: str | None = None
    tool_version: str = __version__
    rng_algorithm: str = RNG_ALGORITHM

    def to_dict(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "config": self.config.to_dict(),
            "seed": self.seed,
            "output_format": self.output_format,
            "output_path": self.output_path,
            "r": self.r,
            "b": self.b,
            "m_values": list(self.m_values) if self.m_values is not None else None,
            "datasets": self.datasets,
            "bias_correct": self.bias_correct,
            "preset": self.preset,
            "tool_version": self.tool_version,
            "rng_algorithm": self.rng_algorithm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RunManifest:
        d = dict(d)
        d["config"] = ToyConfig.from_dict(d["config"])
        if d.get("m_values") is not None:
            d["m_values"] = tuple(d["m_values"])
        return cls(**d)


def format_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    text = format(x, ".17g")
    if not any(ch in text for ch in ".en"):
        text += ".0"
    return text


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad}{_encode(v, indent, level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if hasattr(obj, "item"):  # numpy scalar
        return _encode(obj.item(), indent, level)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj, indent: int = 2) -> str:
    return _encode(obj, indent, 0) + "\n"


def flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for key, value in d.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(flatten(value, name + "."))
        elif isinstance(value, (list, tuple)):
            for i, v in enumerate(value):
                if isinstance(v, dict):
                    out.update(flatten(v, f"{name}.{i}."))
                else:
                    out[f"{name}.{i}"] = v
        else:
            out[name] = value
    return out


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if hasattr(value, "item"):
        value = value.item()
    if isinstance(value, float):
        return format_float(value)
    return str(value)


def dumps_csv(rows: list[dict], manifest: RunManifest) -> str:
    """Rows as CSV under a one-line ``# manifest:`` comment header."""
    buf = io.StringIO()
    buf.write("# manifest: " + json.dumps(manifest.to_dict(), separators=(",", ":")) + "\n")
    columns = list(rows[0]) if rows else []
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def read_manifest(text: str) -> RunManifest:
    """Manifest embedded in a JSON or CSV report."""
    if text.startswith("# manifest: "):
        return RunManifest.from_dict(json.loads(text.splitlines()[0][len("# manifest: "):]))
    return RunManifest.from_dict(json.loads(text)["manifest"])
