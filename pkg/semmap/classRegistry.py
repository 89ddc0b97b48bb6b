"""Class registry: semantic classes and lane-mark labels, 255 reserved as ignore."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Union

IGNORE_ID = 255
MOVABLE_GROUP = 'movable_object'
SEMANTIC_GROUPS = ('movable_object', 'surface', 'infrastructure', 'nature', 'void')
LANE_MARK_GROUPS = ('dividing', 'guiding', 'stopping', 'chevron', 'parking', 'zebra', 'arrow', 'reduction',
                    'attention', 'no_parking', 'other')
ALLOWED_GROUPS = SEMANTIC_GROUPS + LANE_MARK_GROUPS

ROAD_ID = 9
SIDEWALK_ID = 10
LANE_MARK_IDS = tuple(range(200, 234)) + (250,)  # rows of laneMarkClasses.txt
ROAD_SURFACE_IDS = (ROAD_ID, SIDEWALK_ID) + LANE_MARK_IDS

TABLE_DIRECTORY = Path(__file__).parent
SEMANTIC_TABLE = TABLE_DIRECTORY / 'semanticClasses.txt'
LANE_MARK_TABLE = TABLE_DIRECTORY / 'laneMarkClasses.txt'


class DuplicateClassError(ValueError):
    """Two table rows share a class id."""


class UnknownGroupError(ValueError):
    """A table row names a group that is not known."""


@dataclass(frozen=True)
class ClassEntry:
    """One registry row."""
    name: str
    group: str
    movable: bool


class ClassRegistry:
    """Mapping class id -> (name, group, movable); the ignore id 255 is always reserved."""

    ignoreId = IGNORE_ID

    def __init__(self, entries: Optional[dict[int, ClassEntry]] = None,
                 ignoredNames: Iterable[str] = ()) -> None:
        self.entries: dict[int, ClassEntry] = dict(entries or {})
        self.ignoredNames = tuple(ignoredNames)
        if IGNORE_ID in self.entries:
            raise DuplicateClassError(f'Class id {IGNORE_ID} is reserved for ignored labels')

    def __contains__(self, classId: int) -> bool:
        return int(classId) in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def isValid(self, classId: int) -> bool:
        """True for registered ids and the ignore id."""
        return int(classId) == IGNORE_ID or int(classId) in self.entries

    def isMovable(self, classId: int) -> bool:
        """True if the class belongs to the movable-object group."""
        entry = self.entries.get(int(classId))
        return entry is not None and entry.movable

    def movableIds(self) -> list[int]:
        """Sorted ids of all movable classes."""
        return sorted(classId for classId, entry in self.entries.items() if entry.movable)

    def name(self, classId: int) -> str:
        """Name of a class; 'ignore' for 255."""
        if int(classId) == IGNORE_ID:
            return 'ignore'
        return self.entries[int(classId)].name

    def idByName(self, name: str) -> int:
        """Class id of a registered name."""
        for classId, entry in self.entries.items():
            if entry.name == name:
                return classId
        if name in self.ignoredNames:
            return IGNORE_ID
        raise KeyError(f"Unknown class name '{name}'")

    def merge(self, other: ClassRegistry) -> ClassRegistry:
        """Union of two registries; ids must not collide."""
        collisions = sorted(set(self.entries) & set(other.entries))
        if collisions:
            raise DuplicateClassError(f'Class ids defined twice: {collisions}')
        return ClassRegistry({**self.entries, **other.entries}, self.ignoredNames + other.ignoredNames)


def loadRegistry(source: Union[str, Path]) -> ClassRegistry:
    """Load a class table: lines 'id name group', '#' comments.

    Args:
        source (str|Path): class-table file

    Returns:
        ClassRegistry: registry; rows with id 255 are kept as ignored names

    Raises:
        DuplicateClassError: an id appears twice
        UnknownGroupError: a group is not one of ALLOWED_GROUPS
    """
    entries: dict[int, ClassEntry] = {}
    ignoredNames: list[str] = []
    with open(source, encoding='utf-8') as fh:
        for lineNo, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f'{source}:{lineNo}: expected "id name group", got "{line}"')
            try:
                classId = int(parts[0])
            except ValueError as e:
                raise ValueError(f'{source}:{lineNo}: invalid class id "{parts[0]}"') from e
            name, group = parts[1], parts[2]
            if group not in ALLOWED_GROUPS:
                raise UnknownGroupError(f'{source}:{lineNo}: unknown group "{group}"')
            if classId == IGNORE_ID:
                ignoredNames.append(name)
                continue
            if classId in entries:
                raise DuplicateClassError(f'{source}:{lineNo}: duplicate class id {classId}')
            entries[classId] = ClassEntry(name, group, group == MOVABLE_GROUP)
    return ClassRegistry(entries, ignoredNames)


def defaultRegistry() -> ClassRegistry:
    """Semantic classes merged with the lane-mark labels."""
    return loadRegistry(SEMANTIC_TABLE).merge(loadRegistry(LANE_MARK_TABLE))
