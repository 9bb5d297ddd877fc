"""Task schedules: which classes arrive in which task, and in which feature space.

Schedule files are plain text::

    format_version: 1
    # comments and blank lines are ignored
    task 1 [space=au]: neutral, happy, sad
    task 2: happily surprised, awed

Class ids are assigned 0, 1, 2, ... in file order, so the same file always
yields the same ids whatever order tasks are later trained in.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .errors import SchemaError, ScheduleError, TaskUnknownError

SCHEDULE_FORMAT_VERSION = 1
DEFAULT_SPACE = "au"
BUILTIN_PREFIX = "builtin:"

_CFEE6 = f"""format_version: {SCHEDULE_FORMAT_VERSION}
task 1: neutral, happy, sad, fearful, angry, surprised, disgusted
task 2: happily surprised, happily disgusted, awed
task 3: sadly fearful, sadly angry, sadly surprised, sadly disgusted
task 4: fearfully angry, fearfully surprised, fearfully disgusted
task 5: angrily surprised, angrily disgusted, hatred
task 6: disgustedly surprised, appalled
"""

BUILTIN_SCHEDULES = {"cfee6": _CFEE6}

_TASK_LINE = re.compile(r"^task\s+(?P<id>\d+)\s*(?:\[(?P<opts>[^\]]*)\])?\s*:\s*(?P<classes>.*)$")


def normalize_label(label: str) -> str:
    """``"Happily_Surprised "`` -> ``"happily surprised"``."""
    return " ".join(str(label).replace("_", " ").replace("-", " ").lower().split())


@dataclass(frozen=True)
class ClassInfo:
    class_id: int
    label: str
    task_id: int


@dataclass(frozen=True)
class Task:
    task_id: int
    class_ids: tuple
    feature_space_id: str = DEFAULT_SPACE


@dataclass(frozen=True)
class TaskSchedule:
    tasks: tuple
    classes: tuple

    def __post_init__(self):
        if not self.tasks:
            raise SchemaError("a schedule needs at least one task")
        seen_tasks, seen_labels = set(), {}
        for task in self.tasks:
            if task.task_id in seen_tasks:
                raise SchemaError(f"task {task.task_id} is defined twice")
            seen_tasks.add(task.task_id)
            if not task.class_ids:
                raise SchemaError(f"task {task.task_id} has no classes")
        for c in self.classes:
            if c.label in seen_labels:
                raise SchemaError(
                    f"class {c.label!r} appears in task {seen_labels[c.label]} and task {c.task_id}"
                )
            seen_labels[c.label] = c.task_id
        if [c.class_id for c in self.classes] != list(range(len(self.classes))):
            raise SchemaError("class ids must be 0..K-1 in schedule order")

    @classmethod
    def from_tasks(cls, tasks, spaces=None):
        """Build from ``[(task_id, [labels...]), ...]``; ids follow list order."""
        spaces = spaces or {}
        out_tasks, out_classes = [], []
        for task_id, labels in tasks:
            ids = []
            for label in labels:
                cid = len(out_classes)
                out_classes.append(ClassInfo(cid, normalize_label(label), int(task_id)))
                ids.append(cid)
            out_tasks.append(Task(int(task_id), tuple(ids), spaces.get(task_id, DEFAULT_SPACE)))
        return cls(tuple(out_tasks), tuple(out_classes))

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def task_ids(self):
        return [t.task_id for t in self.tasks]

    def task(self, task_id) -> Task:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise TaskUnknownError(f"task {task_id!r} is not in the schedule (known: {self.task_ids})")

    def task_of(self, class_id) -> int:
        return self.classes[class_id].task_id

    def label(self, class_id) -> str:
        return self.classes[class_id].label

    def class_id(self, label) -> int:
        key = normalize_label(label)
        for c in self.classes:
            if c.label == key:
                return c.class_id
        raise ScheduleError(f"unknown class label {label!r}")

    def boundaries(self):
        """Class-id offsets where each task's block starts, plus the end."""
        out, pos = [0], 0
        for t in self.tasks:
            pos += len(t.class_ids)
            out.append(pos)
        return out

    def to_text(self) -> str:
        lines = [f"format_version: {SCHEDULE_FORMAT_VERSION}"]
        for t in self.tasks:
            opts = "" if t.feature_space_id == DEFAULT_SPACE else f" [space={t.feature_space_id}]"
            labels = ", ".join(self.classes[c].label for c in t.class_ids)
            lines.append(f"task {t.task_id}{opts}: {labels}")
        return "\n".join(lines) + "\n"

    def to_dict(self):
        return {
            "tasks": [
                {
                    "task_id": t.task_id,
                    "feature_space_id": t.feature_space_id,
                    "classes": [self.classes[c].label for c in t.class_ids],
                }
                for t in self.tasks
            ]
        }

    @classmethod
    def from_dict(cls, d):
        tasks = [(t["task_id"], t["classes"]) for t in d["tasks"]]
        spaces = {t["task_id"]: t.get("feature_space_id", DEFAULT_SPACE) for t in d["tasks"]}
        return cls.from_tasks(tasks, spaces)


def parse_schedule(text: str) -> TaskSchedule:
    version = None
    tasks, spaces = [], {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("format_version"):
            _, _, value = line.partition(":")
            try:
                version = int(value)
            except ValueError:
                raise SchemaError(f"line {lineno}: bad format_version {value.strip()!r}") from None
            if version != SCHEDULE_FORMAT_VERSION:
                raise SchemaError(f"line {lineno}: unsupported schedule format_version {version}")
            continue
        m = _TASK_LINE.match(line)
        if not m:
            raise SchemaError(f"line {lineno}: expected 'task <id>: <labels>', got {raw!r}")
        task_id = int(m["id"])
        labels = [normalize_label(s) for s in m["classes"].split(",") if s.strip()]
        for opt in filter(None, (o.strip() for o in (m["opts"] or "").split(","))):
            key, _, value = opt.partition("=")
            if key.strip() != "space" or not value.strip():
                raise SchemaError(f"line {lineno}: unknown task option {opt!r}")
            spaces[task_id] = value.strip()
        tasks.append((task_id, labels))
    if version is None:
        raise SchemaError("schedule is missing its 'format_version:' line")
    return TaskSchedule.from_tasks(tasks, spaces)


def load_task_schedule(source) -> TaskSchedule:
    """Load a schedule from a file path or ``builtin:<name>``."""
    src = str(source)
    if src.startswith(BUILTIN_PREFIX):
        name = src[len(BUILTIN_PREFIX):]
        if name not in BUILTIN_SCHEDULES:
            raise SchemaError(f"no built-in schedule {name!r} (available: {sorted(BUILTIN_SCHEDULES)})")
        return parse_schedule(BUILTIN_SCHEDULES[name])
    return parse_schedule(Path(src).read_text(encoding="utf-8"))


def single_task_schedule(labels, space=DEFAULT_SPACE) -> TaskSchedule:
    """All classes in one task (the offline baseline)."""
    return TaskSchedule.from_tasks([(1, labels)], {1: space})
