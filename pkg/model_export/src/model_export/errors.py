"""Error type for the export tool."""


class ExportError(Exception):
    """Checkpoint unavailable, invalid export input, or fidelity failure."""
