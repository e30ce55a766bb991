from typing import Any, Dict, List, Optional, Sequence, Tuple, Type, TypeVar
from pathlib import Path
import hashlib

from pydantic import BaseModel, ValidationError

from crossnet.exceptions import ConfigError

ModelT = TypeVar("ModelT", bound=BaseModel)


def build_model(model_cls: Type[ModelT], **values: Any) -> ModelT:
    """Validate a pydantic model, reporting failures as ConfigError."""
    try:
        return model_cls(**values)
    except ValidationError as e:
        raise ConfigError(format_validation_error(e)) from e


def format_validation_error(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(p) for p in item["loc"]) or "config"
        parts.append(f"{location}: {item['msg']}")
    return "; ".join(parts)


def parse_int_list(text: str) -> List[int]:
    """Parse '1,2,4' into [1, 2, 4]."""
    try:
        return [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError as e:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from e


def parse_pair(text: str) -> Tuple[int, int]:
    values = parse_int_list(text)
    if len(values) != 2:
        raise ConfigError(f"expected two comma-separated integers, got {text!r}")
    return values[0], values[1]


def parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def parse_assignments(items: Optional[Sequence[str]]) -> Dict[str, str]:
    """Parse repeated KEY=VALUE strings."""
    out: Dict[str, str] = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"expected KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def directory_checksum(root: Path) -> str:
    """SHA-256 over relative paths and contents of every file below `root`."""
    digest = hashlib.sha256()
    root = Path(root)
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        digest.update(path.relative_to(root).as_posix().encode("utf-8"))
        digest.update(path.read_bytes())
    return digest.hexdigest()


def is_nonempty_dir(path: Path) -> bool:
    path = Path(path)
    return path.is_dir() and any(path.iterdir())
