import enum
from typing import Dict, List, Optional, Tuple

from pydantic import root_validator

from models.schema import Schema


class DatasetKind(str, enum.Enum):
    CFD = "cfd"
    AIGLERN = "aiglern"
    CUSTOM = "custom"


# accepted (width, height) pairs, either orientation, and channel count per corpus
KIND_GEOMETRY: Dict[DatasetKind, Tuple[List[Tuple[int, int]], int]] = {
    DatasetKind.CFD: ([(480, 320), (320, 480)], 3),
    DatasetKind.AIGLERN: ([(991, 462), (462, 991), (311, 462), (462, 311)], 1),
}

DEFAULT_SPLIT_COUNTS: Dict[DatasetKind, Tuple[int, int]] = {
    DatasetKind.CFD: (72, 46),
    DatasetKind.AIGLERN: (24, 14),
}

DEFAULT_THRESHOLDS: Dict[DatasetKind, float] = {
    DatasetKind.CFD: 0.6,
    DatasetKind.AIGLERN: 0.4,
    DatasetKind.CUSTOM: 0.5,
}


class DatasetEntry(Schema):
    stem: str
    image_path: str
    mask_path: str
    width: int
    height: int
    channels: int
    image_bytes: int = 0
    image_sha256: Optional[str] = None
    mask_bytes: int = 0
    mask_sha256: Optional[str] = None


class DatasetManifest(Schema):
    kind: DatasetKind
    root: str
    entries: List[DatasetEntry]
    digest: str

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def stems(self) -> List[str]:
        return [entry.stem for entry in self.entries]

    def entry(self, stem: str) -> DatasetEntry:
        for entry in self.entries:
            if entry.stem == stem:
                return entry
        raise KeyError(stem)


class SplitSpec(Schema):
    dataset: str
    seed: int
    train: List[str]
    test: List[str]

    @root_validator(skip_on_failure=True)
    def disjoint(cls, values):
        overlap = set(values["train"]) & set(values["test"])
        if overlap:
            raise ValueError(f"train and test share images: {sorted(overlap)}")
        return values

    @property
    def counts(self) -> Tuple[int, int]:
        return len(self.train), len(self.test)
