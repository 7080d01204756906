"""Exception types shared across the package."""


class CellVidGenError(Exception):
    """Base class for all package errors."""


class DataTreeError(CellVidGenError):
    """A sequence tree on disk is inconsistent (missing frames, bad lineage)."""


class LineageParseError(DataTreeError):
    """A lineage table line could not be parsed."""


class DescriptorError(CellVidGenError):
    """A cell's contour descriptor could not be extracted."""


class ShapeFitError(CellVidGenError):
    """Shape model fitting failed (too few or degenerate descriptors)."""


class RenderError(CellVidGenError):
    """A contour could not be rasterized (non-positive radii, too large)."""


class CheckpointError(CellVidGenError):
    """A checkpoint archive is missing, malformed, or incompatible."""


class PlacementError(CellVidGenError):
    """Scene composition could not place all cells under the overlap policy."""


class EmbedderError(CellVidGenError):
    """Unknown embedder id or embedder misuse."""


class CongruenceError(CellVidGenError):
    """Two sequences being compared disagree in length or raster shape."""


class ConfigError(CellVidGenError):
    """Aggregated configuration validation failure.

    ``problems`` holds one human-readable message per violating key.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
