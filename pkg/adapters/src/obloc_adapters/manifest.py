"""Export provenance sidecars."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .formats import atomic_write_text


@dataclass(frozen=True)
class AdapterManifest:
    model_name: str
    model_config: str
    input_dir: str
    output_path: str
    exported_at: str = ""

    @staticmethod
    def now(model_name, model_config, input_dir, output_path):
        return AdapterManifest(model_name, model_config, str(input_dir),
                               str(output_path),
                               datetime.now(timezone.utc).isoformat())

    def write_sidecar(self) -> Path:
        path = Path(str(self.output_path) + ".manifest.txt")
        atomic_write_text(path, self.to_text())
        return path

    def to_text(self) -> str:
        return ("model_name: {0}\nmodel_config: {1}\ninput_dir: {2}\n"
                "output_path: {3}\nexported_at: {4}\n").format(
                    self.model_name, self.model_config, self.input_dir,
                    self.output_path, self.exported_at)

    @staticmethod
    def from_text(text: str) -> "AdapterManifest":
        fields = {}
        for line in text.splitlines():
            key, _, value = line.partition(": ")
            fields[key] = value
        return AdapterManifest(fields["model_name"], fields["model_config"],
                               fields["input_dir"], fields["output_path"],
                               fields.get("exported_at", ""))
