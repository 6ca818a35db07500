"""Exception hierarchy shared across the package.

The CLI maps these to process exit codes, so library code should raise the
most specific type that applies rather than bare ValueError.
"""


class HglocError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(HglocError):
    """Invalid or inconsistent configuration (exit code 2)."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DataError(HglocError):
    """Malformed input data or artifact files (exit code 3)."""


class GraphError(DataError):
    """Graph construction preconditions violated."""


class ContainerError(DataError):
    """Binary artifact container is corrupt, truncated, or wrong version."""


class TrainingDivergedError(HglocError):
    """Loss became non-finite during optimization (exit code 4)."""


class StageError(HglocError):
    """A pipeline stage failed; wraps the underlying error with the stage name.

    The CLI derives its exit code from ``cause``, so the wrapped error keeps
    its meaning across the stage boundary.
    """

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")
