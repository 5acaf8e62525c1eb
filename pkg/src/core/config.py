import logging
from pathlib import Path
from typing import Iterable

from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from core.exceptions import ConfigError
from schemas.config import RunConfig

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="LODESTAR_", env_file=".env", extra="ignore"
    )

    LOG_LEVEL: str = "INFO"
    LOG_FILE: Path | None = None
    APP_MODE: str = "dev"
    REPORT_INDENT: int = 2


settings = Settings()


def parse_assignment(text: str, source: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"{source}: expected 'key = value', got '{text}'")
    key, value = text.split("=", 1)
    key, value = key.strip(), value.strip()
    if not key:
        raise ConfigError(f"{source}: missing key in '{text}'")
    return key, value


def parse_config_file(path: Path) -> dict[str, str]:
    """Read `key = value` lines; `#` starts a comment."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        logger.error(f"Could not read config file {path}: {e}", exc_info=True)
        raise ConfigError(f"cannot read config file {path}: {e}")

    values: dict[str, str] = {}
    for number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, value = parse_assignment(line, f"{path}:{number}")
        values[key] = value
    return values


def load_run_config(
    path: Path | None = None, overrides: Iterable[str] = ()
) -> RunConfig:
    values: dict[str, str] = {}
    if path is not None:
        values.update(parse_config_file(path))
    for item in overrides:
        key, value = parse_assignment(item, "--set")
        values[key] = value

    logger.debug(f"Run config keys: {sorted(values)}")
    try:
        return RunConfig.model_validate(values)
    except ValidationError as e:
        unknown = sorted(
            str(err["loc"][0]) for err in e.errors() if err["type"] == "extra_forbidden"
        )
        invalid = sorted(
            str(err["loc"][0])
            for err in e.errors()
            if err["type"] != "extra_forbidden" and err["loc"]
        )
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}", unknown)
        raise ConfigError(f"invalid values for config keys: {', '.join(invalid)}", invalid)
