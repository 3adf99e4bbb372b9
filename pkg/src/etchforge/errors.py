"""Exception hierarchy shared by all pipeline stages."""

from __future__ import annotations


class EtchforgeError(Exception):
    pass


class InvalidConfig(EtchforgeError, ValueError):
    pass


class ConfigError(EtchforgeError):
    pass


class MalformedRecord(EtchforgeError):
    def __init__(self, file: str, line: int, reason: str) -> None:
        super().__init__(f"{file}:{line}: {reason}")
        self.file = file
        self.line = line
        self.reason = reason


class MissingFile(EtchforgeError):
    def __init__(self, path: str) -> None:
        super().__init__(f"required file missing: {path}")
        self.path = path


class DuplicateRunId(EtchforgeError):
    def __init__(self, chamber_id: str, run_id: str) -> None:
        super().__init__(f"duplicate run id {run_id!r} on chamber {chamber_id!r}")
        self.chamber_id = chamber_id
        self.run_id = run_id


class EmptyResult(EtchforgeError):
    pass


class UnknownRecipe(EtchforgeError):
    def __init__(self, recipe_id: str, sensor: str | None = None) -> None:
        where = f" (sensor {sensor!r})" if sensor else ""
        super().__init__(f"no training statistics for recipe {recipe_id!r}{where}")
        self.recipe_id = recipe_id
        self.sensor = sensor


class EmptySelection(EtchforgeError):
    pass


class UnknownFeatureSet(EtchforgeError):
    pass


class InvalidModelSpec(EtchforgeError, ValueError):
    pass


class DegenerateTarget(EtchforgeError):
    pass


class SchemaMismatch(EtchforgeError):
    def __init__(self, expected: list[str], got: list[str]) -> None:
        missing = sorted(set(expected) - set(got))
        extra = sorted(set(got) - set(expected))
        super().__init__(
            f"feature columns differ from fit time (missing={missing}, extra={extra}, "
            f"order_changed={not missing and not extra})"
        )
        self.expected = expected
        self.got = got


class TooFewSegments(EtchforgeError):
    def __init__(self, n_segments: int, k: int) -> None:
        super().__init__(f"{n_segments} complete segments cannot fill {k} folds")
        self.n_segments = n_segments
        self.k = k


class ZeroBenchmark(EtchforgeError):
    pass


class ArtifactMismatch(EtchforgeError):
    def __init__(self, stage: str, name: str, reason: str) -> None:
        super().__init__(f"{stage}: {name} {reason}")
        self.stage = stage
        self.name = name
