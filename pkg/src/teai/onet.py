"""O*NET and BLS table ingestion.

Parses the tab-delimited O*NET distribution files (Task Statements, Task
Ratings, Skills) and BLS employment tables into validated records, collapses
frequency distributions to the 1-7 scalar used as an aggregation weight,
imputes weights for occupations that ship without task ratings, and
round-trips the canonical ``tasks.csv``.

All parsers accept a path or an open text stream, tolerate a UTF-8 BOM and
mixed line endings, and report malformed rows with their line numbers
instead of aborting (a missing header is fatal).
"""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from statistics import median
from typing import IO, Iterable, Mapping, Sequence

from .errors import ConfigError, DataValidationError, FormatError
from .storage import read_csv, write_csv

logger = logging.getLogger(__name__)

SOC_PATTERN = re.compile(r"^\d{2}-\d{4}\.\d{2}$")
BARE_SOC_PATTERN = re.compile(r"^\d{2}-\d{4}$")

RELEVANCE_SCALE_MAX = 100.0
IMPORTANCE_SCALE_MAX = 5.0
FREQUENCY_SCALE_MAX = 7.0
FREQUENCY_CATEGORIES = tuple(range(1, 8))
FREQUENCY_SUM_TOLERANCE = 0.5

SKILL_CLASSES = ("Cognitive", "Social", "ProblemSolvingManagement", "Technical")

TASKS_CSV_HEADER = (
    "soc",
    "task_id",
    "description",
    "relevance",
    "importance",
    "frequency",
    "weights_imputed",
)


@dataclass(frozen=True, order=True)
class SocCode:
    """O*NET-SOC occupation code of the form NN-NNNN.NN."""

    code: str

    def __post_init__(self) -> None:
        if not SOC_PATTERN.match(self.code):
            raise ValueError(f"not a valid O*NET-SOC code: {self.code!r}")

    def __str__(self) -> str:
        return self.code

    @property
    def digits(self) -> str:
        return self.code.replace("-", "").replace(".", "")

    def group(self, n_digits: int) -> str:
        """Leading SOC group prefix (2 = major group, up to 5 = broad)."""
        if n_digits not in (2, 3, 4, 5):
            raise ValueError("SOC group prefixes are 2-5 digits")
        return self.digits[:n_digits]

    @property
    def major_group(self) -> str:
        return self.group(2)

    @classmethod
    def parse(cls, raw: str) -> "SocCode":
        """Parse a code, widening bare 6-digit SOC (NN-NNNN) to NN-NNNN.00."""
        text = raw.strip()
        if BARE_SOC_PATTERN.match(text):
            text += ".00"
        return cls(text)


@dataclass(frozen=True)
class Occupation:
    soc: SocCode
    title: str

    def __post_init__(self) -> None:
        if not self.title:
            raise ValueError(f"occupation {self.soc} has an empty title")


@dataclass(frozen=True)
class TaskRecord:
    """One O*NET task with the three aggregation weights."""

    task_id: int
    soc: SocCode
    description: str
    relevance: float
    importance: float
    frequency: float
    weights_imputed: bool = False

    def __post_init__(self) -> None:
        if not self.description:
            raise ValueError(f"task {self.task_id} has an empty description")
        if not 0.0 <= self.relevance <= RELEVANCE_SCALE_MAX:
            raise ValueError(f"task {self.task_id}: relevance {self.relevance} outside [0, 100]")
        if not 1.0 <= self.importance <= IMPORTANCE_SCALE_MAX:
            raise ValueError(f"task {self.task_id}: importance {self.importance} outside [1, 5]")
        if not 1.0 <= self.frequency <= FREQUENCY_SCALE_MAX:
            raise ValueError(f"task {self.task_id}: frequency {self.frequency} outside [1, 7]")


@dataclass(frozen=True)
class EmploymentRecord:
    soc: SocCode
    employment: float
    year: int
    wage: float | None = None
    sector: str | None = None

    def __post_init__(self) -> None:
        if self.employment < 0:
            raise ValueError(f"{self.soc}: negative employment")
        if self.wage is not None and self.wage < 0:
            raise ValueError(f"{self.soc}: negative wage")


@dataclass(frozen=True)
class SkillRecord:
    soc: SocCode
    skill_id: str
    skill_name: str
    level: float
    importance: float
    skill_class: str

    def __post_init__(self) -> None:
        if not 0.0 <= self.level <= 7.0:
            raise ValueError(f"{self.skill_name}: level {self.level} outside [0, 7]")
        if not 1.0 <= self.importance <= 5.0:
            raise ValueError(f"{self.skill_name}: importance {self.importance} outside [1, 5]")
        if self.skill_class not in SKILL_CLASSES:
            raise ValueError(f"unknown skill class {self.skill_class!r}")


@dataclass(frozen=True)
class RowIssue:
    """A skipped or suspect input row, kept for the run report."""

    line: int
    message: str


@dataclass(frozen=True)
class TaskStatement:
    task_id: int
    soc: SocCode
    description: str
    title: str = ""


@dataclass
class StatementTable:
    records: list[TaskStatement]
    skipped: list[RowIssue] = field(default_factory=list)

    @property
    def n_tasks(self) -> int:
        return len(self.records)

    @property
    def n_occupations(self) -> int:
        return len({r.soc for r in self.records})

    def occupations(self) -> dict[SocCode, str]:
        titles: dict[SocCode, str] = {}
        for record in self.records:
            if record.title:
                titles.setdefault(record.soc, record.title)
        return titles


@dataclass(frozen=True)
class TaskRatings:
    """Raw per-task ratings; any component may be missing in the source."""

    relevance: float | None = None
    importance: float | None = None
    frequency_dist: dict[int, float] | None = None


@dataclass
class RatingsTable:
    ratings: dict[int, TaskRatings]
    skipped: list[RowIssue] = field(default_factory=list)


def _open_rows(source: IO[str] | str | Path):
    """Yield (line_number, row) from a tab-delimited source."""
    if isinstance(source, (str, Path)):
        handle: IO[str] = open(source, encoding="utf-8-sig", newline="")
        close = True
    else:
        handle, close = source, False
    try:
        reader = csv.reader(handle, delimiter="\t")
        for line_no, row in enumerate(reader, start=1):
            yield line_no, row
    finally:
        if close:
            handle.close()


def _header_index(header: Sequence[str], required: Sequence[str], source_name: str) -> dict[str, int]:
    cleaned = [col.strip().lstrip("﻿") for col in header]
    index = {col: i for i, col in enumerate(cleaned)}
    missing = [col for col in required if col not in index]
    if missing:
        raise FormatError(f"{source_name}: header is missing column(s) {missing}")
    return index


def parse_task_statements(source: IO[str] | str | Path) -> StatementTable:
    """Parse the O*NET Task Statements table.

    Malformed rows (wrong column count, bad SOC/task id, empty description)
    are skipped and reported with their line number; a missing header is a
    fatal :class:`FormatError`.
    """
    rows = _open_rows(source)
    try:
        _, header = next(rows)
    except StopIteration:
        raise FormatError("Task Statements: empty file, no header row") from None
    index = _header_index(header, ["O*NET-SOC Code", "Task ID", "Task"], "Task Statements")
    title_col = index.get("Title")

    table = StatementTable(records=[])
    for line_no, row in rows:
        if not row:
            continue
        if len(row) != len(header):
            table.skipped.append(RowIssue(line_no, f"expected {len(header)} columns, found {len(row)}"))
            continue
        try:
            soc = SocCode.parse(row[index["O*NET-SOC Code"]])
            task_id = int(row[index["Task ID"]].strip())
            description = row[index["Task"]].strip()
            if not description:
                raise ValueError("empty task description")
        except ValueError as exc:
            table.skipped.append(RowIssue(line_no, str(exc)))
            continue
        title = row[title_col].strip() if title_col is not None else ""
        table.records.append(TaskStatement(task_id, soc, description, title))

    logger.info(
        "parsed %d task statements across %d occupations (%d rows skipped)",
        table.n_tasks, table.n_occupations, len(table.skipped),
    )
    return table


def parse_task_ratings(source: IO[str] | str | Path) -> RatingsTable:
    """Parse the O*NET Task Ratings table into per-task weight components.

    Recognized scale identifiers: RT (relevance, 0-100), IM (importance,
    1-5), FT (frequency category shares, categories 1-7). Unknown scales
    are skipped with a warning. Frequency shares must sum to 100 within
    +/-0.5; offenders raise a :class:`DataValidationError` listing every
    bad task id.
    """
    rows = _open_rows(source)
    try:
        _, header = next(rows)
    except StopIteration:
        raise FormatError("Task Ratings: empty file, no header row") from None
    index = _header_index(header, ["Task ID", "Scale ID", "Data Value"], "Task Ratings")
    category_col = index.get("Category")

    table = RatingsTable(ratings={})
    relevance: dict[int, float] = {}
    importance: dict[int, float] = {}
    freq: dict[int, dict[int, float]] = {}

    for line_no, row in rows:
        if not row:
            continue
        if len(row) != len(header):
            table.skipped.append(RowIssue(line_no, f"expected {len(header)} columns, found {len(row)}"))
            continue
        scale = row[index["Scale ID"]].strip()
        try:
            task_id = int(row[index["Task ID"]].strip())
            value = float(row[index["Data Value"]].strip())
        except ValueError as exc:
            table.skipped.append(RowIssue(line_no, str(exc)))
            continue
        if scale == "RT":
            relevance[task_id] = value
        elif scale == "IM":
            importance[task_id] = value
        elif scale == "FT":
            if category_col is None:
                raise FormatError("Task Ratings: FT rows present but no Category column")
            try:
                category = int(row[category_col].strip())
            except ValueError:
                table.skipped.append(RowIssue(line_no, f"FT row with non-integer category {row[category_col]!r}"))
                continue
            if category not in FREQUENCY_CATEGORIES:
                table.skipped.append(RowIssue(line_no, f"FT category {category} outside 1-7"))
                continue
            freq.setdefault(task_id, {})[category] = value
        else:
            table.skipped.append(RowIssue(line_no, f"unknown scale identifier {scale!r}"))
            logger.warning("Task Ratings line %d: unknown scale identifier %r, row skipped", line_no, scale)

    bad_sums = []
    for task_id, dist in freq.items():
        total = sum(dist.values())
        if abs(total - 100.0) > FREQUENCY_SUM_TOLERANCE:
            bad_sums.append((task_id, total))
    if bad_sums:
        listing = ", ".join(f"{tid} (sum={total:g})" for tid, total in sorted(bad_sums))
        raise DataValidationError(f"frequency shares outside 100+/-{FREQUENCY_SUM_TOLERANCE} for task(s): {listing}")

    for task_id in set(relevance) | set(importance) | set(freq):
        table.ratings[task_id] = TaskRatings(
            relevance=relevance.get(task_id),
            importance=importance.get(task_id),
            frequency_dist=freq.get(task_id),
        )
    return table


def collapse_frequency(dist: Mapping[int, float]) -> float:
    """Collapse a category-share distribution to its expected category index."""
    total = 0.0
    weighted = 0.0
    for category, share in dist.items():
        if category not in FREQUENCY_CATEGORIES:
            raise DataValidationError(f"frequency category {category} outside 1-7")
        if share < 0:
            raise DataValidationError(f"negative frequency share for category {category}")
        total += share
        weighted += category * share
    if total == 0:
        raise DataValidationError("no frequency data: all shares are zero")
    return weighted / total


def _column_median(values: Iterable[float]) -> float | None:
    pool = [v for v in values if v is not None]
    return median(pool) if pool else None


def merge_tasks(
    statements: StatementTable,
    ratings: RatingsTable,
    imputation_policy: str = "median",
    overrides: Mapping[SocCode, tuple[float, float, float]] | None = None,
) -> list[TaskRecord]:
    """Join statements with ratings into TaskRecords, imputing missing weights.

    Every statement yields exactly one record. Tasks missing any of
    relevance/importance/frequency get values per column from the policy
    (per-occupation median of rated siblings, falling back to the corpus
    median) and carry ``weights_imputed=True``. A per-occupation override
    triple, when supplied, takes precedence over automatic imputation.
    Rating entries whose task id never appears in the statements are
    ignored with a warning.
    """
    if imputation_policy != "median":
        raise ConfigError(f"unknown imputation policy {imputation_policy!r}")
    overrides = overrides or {}

    known_ids = {s.task_id for s in statements.records}
    orphans = sorted(set(ratings.ratings) - known_ids)
    if orphans:
        logger.warning("%d rated task id(s) missing from statements, ignored: %s", len(orphans), orphans[:10])

    # Collapse frequency distributions once, then build per-column pools.
    scalar: dict[int, tuple[float | None, float | None, float | None]] = {}
    for task_id, entry in ratings.ratings.items():
        frequency = collapse_frequency(entry.frequency_dist) if entry.frequency_dist else None
        scalar[task_id] = (entry.relevance, entry.importance, frequency)

    by_occupation: dict[SocCode, list[tuple[float | None, float | None, float | None]]] = {}
    for statement in statements.records:
        by_occupation.setdefault(statement.soc, []).append(scalar.get(statement.task_id, (None, None, None)))

    corpus_median = tuple(
        _column_median(row[i] for rows in by_occupation.values() for row in rows) for i in range(3)
    )
    occupation_median = {
        soc: tuple(_column_median(row[i] for row in rows) for i in range(3))
        for soc, rows in by_occupation.items()
    }

    records: list[TaskRecord] = []
    for statement in statements.records:
        rel, imp, frq = scalar.get(statement.task_id, (None, None, None))
        imputed = False
        if rel is None or imp is None or frq is None:
            if statement.soc in overrides:
                fill = overrides[statement.soc]
            else:
                fill = tuple(
                    occ if occ is not None else corpus
                    for occ, corpus in zip(occupation_median[statement.soc], corpus_median)
                )
            if any(v is None for v in fill):
                raise DataValidationError(
                    f"cannot impute weights for task {statement.task_id}: no rated tasks in the corpus"
                )
            rel = rel if rel is not None else fill[0]
            imp = imp if imp is not None else fill[1]
            frq = frq if frq is not None else fill[2]
            imputed = True
        records.append(
            TaskRecord(
                task_id=statement.task_id,
                soc=statement.soc,
                description=statement.description,
                relevance=rel,
                importance=imp,
                frequency=frq,
                weights_imputed=imputed,
            )
        )
    return records


def parse_weight_overrides(source: IO[str] | str | Path) -> dict[SocCode, tuple[float, float, float]]:
    """Read a two-column override file: SOC code, then 'relevance,importance,frequency'.

    The triple may be comma- or space-separated. Used to reproduce manually
    assigned weights for occupations that ship without task ratings.
    """
    overrides: dict[SocCode, tuple[float, float, float]] = {}
    for line_no, row in _open_rows(source):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if row[0].lstrip().startswith("#"):
            continue
        if len(row) < 2:
            raise FormatError(f"override file line {line_no}: expected two tab-separated columns")
        soc = SocCode.parse(row[0])
        parts = [p for p in re.split(r"[,\s]+", row[1].strip()) if p]
        if len(parts) != 3:
            raise FormatError(
                f"override file line {line_no}: expected 'relevance,importance,frequency', got {row[1]!r}"
            )
        overrides[soc] = (float(parts[0]), float(parts[1]), float(parts[2]))
    return overrides


def load_class_map(source: IO[str] | str | Path) -> dict[str, str]:
    """Read a two-column skill class map (skill name or element id -> class)."""
    mapping: dict[str, str] = {}
    for line_no, row in _open_rows(source):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if row[0].lstrip().startswith("#"):
            continue
        if len(row) < 2:
            raise FormatError(f"class map line {line_no}: expected two tab-separated columns")
        key, skill_class = row[0].strip(), row[1].strip()
        if skill_class not in SKILL_CLASSES:
            raise ConfigError(
                f"class map line {line_no}: unknown class {skill_class!r} (expected one of {SKILL_CLASSES})"
            )
        mapping[key] = skill_class
    return mapping


def default_class_map() -> dict[str, str]:
    """Built-in grouping of the 35 O*NET skills into the four classes."""
    data = Path(__file__).parent / "data" / "skill_classes.tsv"
    return load_class_map(data)


@dataclass
class SkillTable:
    records: list[SkillRecord]
    skipped: list[RowIssue] = field(default_factory=list)


def parse_skills(source: IO[str] | str | Path, class_map: Mapping[str, str]) -> SkillTable:
    """Parse the O*NET Skills table into per-(occupation, skill) records.

    Scale identifiers: LV (level, 0-7) and IM (importance, 1-5); a record is
    emitted only when both are present. A skill absent from ``class_map``
    (looked up by element id, then by name) is a fatal configuration error.
    """
    rows = _open_rows(source)
    try:
        _, header = next(rows)
    except StopIteration:
        raise FormatError("Skills: empty file, no header row") from None
    index = _header_index(
        header, ["O*NET-SOC Code", "Element ID", "Element Name", "Scale ID", "Data Value"], "Skills"
    )

    table = SkillTable(records=[])
    values: dict[tuple[SocCode, str], dict[str, float]] = {}
    names: dict[str, str] = {}

    for line_no, row in rows:
        if not row:
            continue
        if len(row) != len(header):
            table.skipped.append(RowIssue(line_no, f"expected {len(header)} columns, found {len(row)}"))
            continue
        scale = row[index["Scale ID"]].strip()
        if scale not in ("LV", "IM"):
            table.skipped.append(RowIssue(line_no, f"unknown scale identifier {scale!r}"))
            continue
        try:
            soc = SocCode.parse(row[index["O*NET-SOC Code"]])
            value = float(row[index["Data Value"]].strip())
        except ValueError as exc:
            table.skipped.append(RowIssue(line_no, str(exc)))
            continue
        skill_id = row[index["Element ID"]].strip()
        names[skill_id] = row[index["Element Name"]].strip()
        values.setdefault((soc, skill_id), {})[scale] = value

    for (soc, skill_id), scales in sorted(values.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        name = names[skill_id]
        if "LV" not in scales or "IM" not in scales:
            logger.warning("skill %s for %s missing %s, skipped", name, soc, "LV" if "LV" not in scales else "IM")
            continue
        skill_class = class_map.get(skill_id) or class_map.get(name)
        if skill_class is None:
            raise ConfigError(f"skill class map does not cover {name!r} (element {skill_id})")
        table.records.append(
            SkillRecord(
                soc=soc,
                skill_id=skill_id,
                skill_name=name,
                level=scales["LV"],
                importance=scales["IM"],
                skill_class=skill_class,
            )
        )
    return table


_EMPLOYMENT_ALIASES = {
    "soc": ("occ_code", "soc", "soc_code", "occupation_code", "o*net-soc code"),
    "employment": ("tot_emp", "employment", "emp"),
    "wage": ("a_mean", "mean_wage", "wage", "annual_mean_wage"),
    "sector": ("naics", "sector", "industry"),
    "year": ("year",),
}


def _find_column(header: Sequence[str], aliases: Sequence[str]) -> int | None:
    lowered = [col.strip().lower() for col in header]
    for alias in aliases:
        if alias in lowered:
            return lowered.index(alias)
    return None


@dataclass
class EmploymentTable:
    records: list[EmploymentRecord]
    skipped: list[RowIssue] = field(default_factory=list)


def parse_employment(source: IO[str] | str | Path, year: int) -> EmploymentTable:
    """Parse a delimited BLS-style employment table.

    Accepts comma- or tab-delimited files; column names are matched against
    the usual OES aliases (OCC_CODE/TOT_EMP/A_MEAN/NAICS). Bare 6-digit SOC
    codes are widened to NN-NNNN.00. Unparseable employment values
    (suppression markers like ``**``) skip the row with a warning.
    """
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8-sig")
    else:
        text = source.read()
    lines = text.splitlines()
    if not lines:
        raise FormatError("employment table: empty file")
    delimiter = "\t" if "\t" in lines[0] else ","
    reader = csv.reader(lines, delimiter=delimiter)
    header = next(reader)

    soc_col = _find_column(header, _EMPLOYMENT_ALIASES["soc"])
    emp_col = _find_column(header, _EMPLOYMENT_ALIASES["employment"])
    if soc_col is None or emp_col is None:
        raise FormatError("employment table: need an occupation-code column and an employment column")
    wage_col = _find_column(header, _EMPLOYMENT_ALIASES["wage"])
    sector_col = _find_column(header, _EMPLOYMENT_ALIASES["sector"])
    year_col = _find_column(header, _EMPLOYMENT_ALIASES["year"])

    table = EmploymentTable(records=[])
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            table.skipped.append(RowIssue(line_no, f"expected {len(header)} columns, found {len(row)}"))
            continue
        try:
            soc = SocCode.parse(row[soc_col])
        except ValueError as exc:
            table.skipped.append(RowIssue(line_no, str(exc)))
            continue
        try:
            employment = float(row[emp_col].replace(",", ""))
        except ValueError:
            table.skipped.append(RowIssue(line_no, f"unparseable employment value {row[emp_col]!r}"))
            logger.warning("employment line %d: unparseable value %r, row skipped", line_no, row[emp_col])
            continue
        wage: float | None = None
        if wage_col is not None:
            try:
                wage = float(row[wage_col].replace(",", ""))
            except ValueError:
                wage = None
        sector = row[sector_col].strip() if sector_col is not None and row[sector_col].strip() else None
        row_year = year
        if year_col is not None:
            try:
                row_year = int(row[year_col])
            except ValueError:
                pass
        table.records.append(EmploymentRecord(soc=soc, employment=employment, year=row_year, wage=wage, sector=sector))
    return table


def write_tasks_csv(records: Sequence[TaskRecord], path: Path, manifest_hash: str | None = None) -> None:
    """Write the canonical tasks table, sorted by (soc, task_id)."""
    rows = [
        (
            r.soc.code,
            r.task_id,
            r.description,
            repr(r.relevance),
            repr(r.importance),
            repr(r.frequency),
            "true" if r.weights_imputed else "false",
        )
        for r in sorted(records, key=lambda r: (r.soc, r.task_id))
    ]
    write_csv(path, TASKS_CSV_HEADER, rows, manifest_hash)


def read_tasks_csv(path: Path) -> list[TaskRecord]:
    header, rows, _ = read_csv(path)
    if tuple(header) != TASKS_CSV_HEADER:
        raise FormatError(f"{path}: unexpected tasks.csv header {header}")
    return [
        TaskRecord(
            task_id=int(row["task_id"]),
            soc=SocCode(row["soc"]),
            description=row["description"],
            relevance=float(row["relevance"]),
            importance=float(row["importance"]),
            frequency=float(row["frequency"]),
            weights_imputed=row["weights_imputed"] == "true",
        )
        for row in rows
    ]
