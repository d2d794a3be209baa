from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

from src.exceptions import FormatError


@dataclass(frozen=True)
class EpochRecord:
    """Mean training loss of one epoch"""
    epoch: int
    mean_loss: float
    seconds: float
    steps: int = 0


class LossHistory:
    """Per-epoch loss records, persisted as a plain-text log.

    One line per epoch: ``<epoch> <mean loss> <wall-clock seconds>``.
    """

    def __init__(self, storage_path: Optional[Union[str, Path]] = None):
        self.records: List[EpochRecord] = []
        self.storage_path = Path(storage_path) if storage_path else None

    def __len__(self) -> int:
        return len(self.records)

    def add(self, record: EpochRecord) -> None:
        """Append a record and, when a log path is set, the matching line"""
        self.records.append(record)
        if self.storage_path:
            self.storage_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.storage_path, "a") as f:
                f.write(self.format_line(record) + "\n")

    @property
    def losses(self) -> List[float]:
        return [r.mean_loss for r in self.records]

    @staticmethod
    def format_line(record: EpochRecord) -> str:
        return f"{record.epoch} {record.mean_loss:.9e} {record.seconds:.3f}"

    def save(self, path: Union[str, Path]) -> None:
        """Write the whole history, replacing any existing file"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            for record in self.records:
                f.write(self.format_line(record) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "LossHistory":
        history = cls()
        with open(path, "r") as f:
            for number, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 3:
                    raise FormatError(f"{path}:{number}: expected 3 fields, got {len(parts)}")
                try:
                    record = EpochRecord(epoch=int(parts[0]), mean_loss=float(parts[1]), seconds=float(parts[2]))
                except ValueError as exc:
                    raise FormatError(f"{path}:{number}: {exc}") from exc
                history.records.append(record)
        return history
