"""Pipeline error types, mapped to distinct CLI exit codes."""

from __future__ import annotations


class PipelineError(Exception):
    """Base class for errors the CLI turns into nonzero exits."""

    exit_code = 1


class ConfigError(PipelineError):
    """Invalid or inconsistent run configuration."""

    exit_code = 2


class SchemaError(PipelineError):
    """Input file does not carry the required columns."""

    exit_code = 3


class MissingArtifactError(PipelineError):
    """A stage was run before its prerequisite stage produced output."""

    exit_code = 4
