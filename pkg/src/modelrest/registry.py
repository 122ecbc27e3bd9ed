"""Metamodels and instances found under a models directory.

Layout::

    <models_dir>/<ModelId>.metamodel.json   (or <ModelId>.ecore)
    <models_dir>/<ModelId>/<InstanceId>.xmi (or .json)
    <models_dir>/<ModelId>/.validation.json  per-instance validation switch

Metamodels are parsed and their invariants compiled eagerly; instances
are read on first use and kept in memory afterwards.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .ecore import import_ecore_xmi
from .instance import LoadError, ModelInstance, NotFound
from .metamodel import Metamodel, MetamodelError, parse_metamodel
from .ocl import Validator
from .storage import FORMATS, atomic_write, read_instance

RESERVED_IDS = {"admin"}
VALIDATION_FILE = ".validation.json"


class RegistryError(Exception):
    """Startup failure; ``problems`` lists every diagnostic found."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("\n".join(problems))


@dataclass
class ModelEntry:
    metamodel: Metamodel
    validator: Validator
    directory: Path
    instance_files: dict[str, Path] = field(default_factory=dict)


def load_metamodel_file(path: Path) -> Metamodel:
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".ecore":
        return import_ecore_xmi(text)
    return parse_metamodel(text)


def _model_id_of(path: Path) -> str | None:
    if path.name.endswith(".metamodel.json"):
        return path.name[: -len(".metamodel.json")]
    if path.suffix == ".ecore":
        return path.stem
    return None


class Registry:
    def __init__(self, models_dir: str | Path):
        self.models_dir = Path(models_dir)
        self.models: dict[str, ModelEntry] = {}
        self.instances: dict[tuple[str, str], ModelInstance] = {}
        self.lock = threading.Lock()
        self._scan()

    def _scan(self) -> None:
        if not self.models_dir.is_dir():
            raise RegistryError([f"{self.models_dir}: not a directory"])
        problems: list[str] = []
        for path in sorted(self.models_dir.iterdir()):
            model_id = _model_id_of(path)
            if model_id is None or path.name.startswith("."):
                continue
            where = path.name
            if model_id in RESERVED_IDS:
                problems.append(f"{where}: model id {model_id!r} is reserved")
                continue
            if model_id in self.models:
                problems.append(f"{where}: model {model_id!r} defined twice")
                continue
            try:
                m = load_metamodel_file(path)
                if m.model_id != model_id:
                    raise MetamodelError(f"declares model {m.model_id!r}, file name says {model_id!r}")
                validator = Validator(m)
            except (MetamodelError, OSError, UnicodeDecodeError) as exc:
                problems.append(f"{where}: {exc}")
                continue
            entry = ModelEntry(m, validator, self.models_dir / model_id)
            if entry.directory.is_dir():
                for f in sorted(entry.directory.iterdir()):
                    if f.name.startswith(".") or f.suffix[1:] not in FORMATS:
                        continue
                    if f.stem in entry.instance_files:
                        problems.append(f"{model_id}/{f.name}: instance {f.stem!r} stored twice")
                    entry.instance_files[f.stem] = f
            self.models[model_id] = entry
        if problems:
            raise RegistryError(problems)

    def metamodel(self, model_id: str) -> Metamodel:
        try:
            return self.models[model_id].metamodel
        except KeyError:
            raise NotFound(f"unknown model {model_id!r}") from None

    def instance(self, model_id: str, instance_id: str) -> ModelInstance:
        key = (model_id, instance_id)
        with self.lock:
            found = self.instances.get(key)
            if found is not None:
                return found
            entry = self.models.get(model_id)
            if entry is None or instance_id not in entry.instance_files:
                raise NotFound(f"unknown instance {model_id}/{instance_id}")
            try:
                i = read_instance(entry.instance_files[instance_id], entry.metamodel, instance_id)
            except (LoadError, OSError) as exc:
                raise LoadError(f"{model_id}/{instance_id}: {exc}") from exc
            i.validator = entry.validator
            i.validation_active = self._validation_flags(entry).get(instance_id, True)
            self.instances[key] = i
            return i

    def _validation_flags(self, entry: ModelEntry) -> dict[str, bool]:
        path = entry.directory / VALIDATION_FILE
        if not path.exists():
            return {}
        try:
            flags = json.loads(path.read_text(encoding="utf-8"))
        except (json.JSONDecodeError, OSError) as exc:
            raise LoadError(f"{path}: {exc}") from None
        return {k: bool(v) for k, v in flags.items()} if isinstance(flags, dict) else {}

    def set_validation(self, model_id: str, instance_id: str, enabled: bool) -> None:
        i = self.instance(model_id, instance_id)
        entry = self.models[model_id]
        with self.lock, i.lock:
            flags = self._validation_flags(entry)
            flags[instance_id] = enabled
            atomic_write(entry.directory / VALIDATION_FILE, json.dumps(flags, indent=2, sort_keys=True) + "\n")
            i.validation_active = enabled
