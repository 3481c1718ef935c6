"""Exporter error types."""


class ExportError(Exception):
    """A manifest, input file, or output problem that aborts an export."""


class ModelError(ExportError):
    """The requested encoder could not be loaded or is unusable."""
