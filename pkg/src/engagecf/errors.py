from __future__ import annotations


class EngageError(ValueError):
    """Error carrying a stable machine-readable ``code`` (e.g. ``"empty-dataset"``)."""

    def __init__(self, code: str, message: str | None = None):
        self.code = code
        self.message = message or code
        super().__init__(f"{code}: {self.message}" if message else code)


class TrainingDiverged(EngageError):
    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__("training-diverged", message or f"non-finite loss at epoch {epoch}")
