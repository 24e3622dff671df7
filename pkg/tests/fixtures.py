"""Deterministic fixture corpus: 3 occupations x 6 tasks plus side tables.

Everything here is synthetic but follows the real file layouts (tab-delimited
distribution tables, OES-style employment CSV). Builders write into a target
directory and return the path, so tests can assemble a full working tree
under tmp_path.
"""

from __future__ import annotations

from pathlib import Path

import yaml

SOC_ADMIN = "11-3012.00"
SOC_VET = "29-1131.00"
SOC_TAXI = "53-3054.00"

TITLES = {
    SOC_ADMIN: "Administrative Services Managers",
    SOC_VET: "Veterinarians",
    SOC_TAXI: "Taxi Drivers",
}

# task_id -> (soc, description)
TASKS = {
    1001: (SOC_ADMIN, "Plan and direct the work of clerical support staff."),
    1002: (SOC_ADMIN, "Prepare and review operational budgets for support units."),
    1003: (SOC_ADMIN, "Oversee contracts for office equipment and supplies."),
    1004: (SOC_ADMIN, "Set records-retention schedules and monitor compliance."),
    1005: (SOC_ADMIN, "Coordinate building maintenance requests with facility crews."),
    1006: (SOC_ADMIN, "Organize relocation logistics when departments change floors."),
    1007: (SOC_VET, "Examine animals to diagnose injuries and diseases."),
    1008: (SOC_VET, "Prescribe medication and monitor treatment progress."),
    1009: (SOC_VET, "Perform surgery on small animals under anesthesia."),
    1010: (SOC_VET, "Advise owners on nutrition and preventive care."),
    1011: (SOC_VET, "Maintain clinical records of examinations and treatments."),
    1012: (SOC_VET, "Collect samples and run laboratory diagnostics."),
    1013: (SOC_TAXI, "Drive passengers to destinations by the safest available route."),
    1014: (SOC_TAXI, "Collect fares and issue receipts to passengers."),
    1015: (SOC_TAXI, "Keep the vehicle clean and report mechanical faults."),
    1016: (SOC_TAXI, "Assist passengers with loading and unloading luggage."),
    1017: (SOC_TAXI, "Maintain trip logs with distances and times."),
    1018: (SOC_TAXI, "Plan shift schedules around peak demand hours."),
}

# task_id -> (relevance, importance, {frequency category: share}); missing
# entries exercise imputation (1006 fully unrated, 1012 lacks frequency).
RATINGS = {
    1001: (85.0, 4.2, {5: 60.0, 6: 40.0}),
    1002: (78.0, 4.5, {3: 100.0}),
    1003: (70.0, 3.8, {2: 50.0, 4: 50.0}),
    1004: (64.0, 3.1, {1: 25.0, 2: 75.0}),
    1005: (59.0, 3.4, {4: 100.0}),
    1007: (92.0, 4.8, {4: 70.0, 5: 30.0}),
    1008: (88.0, 4.6, {4: 100.0}),
    1009: (75.0, 4.9, {3: 50.0, 4: 50.0}),
    1010: (83.0, 4.0, {5: 100.0}),
    1011: (90.0, 3.9, {6: 80.0, 7: 20.0}),
    1012: (66.0, 3.5, None),
    1013: (95.0, 4.7, {7: 100.0}),
    1014: (89.0, 4.1, {6: 50.0, 7: 50.0}),
    1015: (72.0, 3.6, {5: 25.0, 6: 75.0}),
    1016: (68.0, 3.2, {6: 100.0}),
    1017: (77.0, 3.3, {5: 50.0, 7: 50.0}),
    1018: (61.0, 3.0, {2: 40.0, 3: 60.0}),
}

# skill name -> element id
SKILL_IDS = {
    "Critical Thinking": "2.A.2.a",
    "Reading Comprehension": "2.A.1.a",
    "Persuasion": "2.B.1.c",
    "Complex Problem Solving": "2.B.2.i",
    "Time Management": "2.B.5.a",
    "Repairing": "2.B.3.l",
}

# soc -> skill name -> (level, importance)
SKILLS = {
    SOC_ADMIN: {
        "Critical Thinking": (4.1, 4.0),
        "Reading Comprehension": (4.3, 4.2),
        "Persuasion": (3.9, 3.6),
        "Complex Problem Solving": (4.0, 3.9),
        "Time Management": (4.4, 4.1),
        "Repairing": (0.8, 1.2),
    },
    SOC_VET: {
        "Critical Thinking": (4.8, 4.6),
        "Reading Comprehension": (4.9, 4.5),
        "Persuasion": (3.2, 3.0),
        "Complex Problem Solving": (4.6, 4.4),
        "Time Management": (3.8, 3.7),
        "Repairing": (1.5, 1.8),
    },
    SOC_TAXI: {
        "Critical Thinking": (3.0, 3.2),
        "Reading Comprehension": (2.6, 2.8),
        "Persuasion": (2.4, 2.2),
        "Complex Problem Solving": (2.8, 2.6),
        "Time Management": (3.4, 3.5),
        "Repairing": (2.2, 2.5),
    },
}

EMPLOYMENT = {SOC_ADMIN: 250000.0, SOC_VET: 80000.0, SOC_TAXI: 180000.0}
WAGES = {SOC_ADMIN: 105000.0, SOC_VET: 120000.0, SOC_TAXI: 35000.0}

STATEMENTS_HEADER = (
    "O*NET-SOC Code\tTitle\tTask ID\tTask\tTask Type\tIncumbents Responding\tDate\tDomain Source"
)
RATINGS_HEADER = (
    "O*NET-SOC Code\tTitle\tTask ID\tScale ID\tCategory\tData Value\tN\tStandard Error"
    "\tLower CI Bound\tUpper CI Bound\tRecommend Suppress\tDate\tDomain Source"
)
SKILLS_HEADER = (
    "O*NET-SOC Code\tTitle\tElement ID\tElement Name\tScale ID\tData Value\tN\tDate\tDomain Source"
)


def task_statements_text() -> str:
    lines = [STATEMENTS_HEADER]
    for task_id, (soc, description) in sorted(TASKS.items()):
        lines.append(
            f"{soc}\t{TITLES[soc]}\t{task_id}\t{description}\tCore\t28\t07/2023\tIncumbent"
        )
    return "\n".join(lines) + "\n"


def task_ratings_text() -> str:
    lines = [RATINGS_HEADER]
    for task_id, (relevance, importance, freq) in sorted(RATINGS.items()):
        soc = TASKS[task_id][0]
        title = TITLES[soc]
        tail = "28\t0.5\t0\t0\tN\t07/2023\tIncumbent"
        lines.append(f"{soc}\t{title}\t{task_id}\tRT\t\t{relevance}\t{tail}")
        lines.append(f"{soc}\t{title}\t{task_id}\tIM\t\t{importance}\t{tail}")
        if freq:
            for category, share in sorted(freq.items()):
                lines.append(f"{soc}\t{title}\t{task_id}\tFT\t{category}\t{share}\t{tail}")
    return "\n".join(lines) + "\n"


def skills_text() -> str:
    lines = [SKILLS_HEADER]
    for soc in sorted(SKILLS):
        for name, (level, importance) in sorted(SKILLS[soc].items()):
            element = SKILL_IDS[name]
            lines.append(f"{soc}\t{TITLES[soc]}\t{element}\t{name}\tLV\t{level}\t28\t07/2023\tIncumbent")
            lines.append(f"{soc}\t{TITLES[soc]}\t{element}\t{name}\tIM\t{importance}\t28\t07/2023\tIncumbent")
    return "\n".join(lines) + "\n"


def employment_text() -> str:
    lines = ["OCC_CODE,TOT_EMP,A_MEAN,NAICS"]
    for soc in sorted(EMPLOYMENT):
        bare = soc[:-3]  # exercises the 6-digit -> NN-NNNN.00 normalization
        lines.append(f"{bare},{EMPLOYMENT[soc]:.0f},{WAGES[soc]:.0f},54")
    lines.append("47-2031,**,45000,23")  # suppressed employment, skipped
    return "\n".join(lines) + "\n"


def panel_text(start_year: int = 2015, end_year: int = 2023) -> str:
    """Employment/wage panel per (soc, sector, year) with smooth trends."""
    growth = {SOC_ADMIN: 0.020, SOC_VET: 0.035, SOC_TAXI: -0.010}
    wage_growth = {SOC_ADMIN: 0.030, SOC_VET: 0.040, SOC_TAXI: 0.015}
    lines = ["soc,sector,year,employment,wage"]
    for soc in sorted(EMPLOYMENT):
        for sector_index, sector in enumerate(("54", "62")):
            base_emp = EMPLOYMENT[soc] * (0.6 if sector_index == 0 else 0.4)
            base_wage = WAGES[soc] * (1.05 if sector_index == 0 else 0.95)
            for year in range(start_year, end_year + 1):
                t = year - start_year
                emp = base_emp * (1.0 + growth[soc] + 0.002 * sector_index) ** t
                wage = base_wage * (1.0 + wage_growth[soc] - 0.003 * sector_index) ** t
                lines.append(f"{soc},{sector},{year},{emp:.3f},{wage:.3f}")
    return "\n".join(lines) + "\n"


def external_index_text() -> str:
    lines = ["soc,value"]
    for soc, value in ((SOC_ADMIN, 0.72), (SOC_VET, 0.55), (SOC_TAXI, 0.31)):
        lines.append(f"{soc},{value}")
    return "\n".join(lines) + "\n"


def write_onet_dir(root: Path) -> Path:
    onet_dir = root / "onet"
    onet_dir.mkdir(parents=True, exist_ok=True)
    (onet_dir / "Task Statements.txt").write_text(task_statements_text(), encoding="utf-8")
    (onet_dir / "Task Ratings.txt").write_text(task_ratings_text(), encoding="utf-8")
    (onet_dir / "Skills.txt").write_text(skills_text(), encoding="utf-8")
    return onet_dir


def write_workspace(root: Path, *, with_analytics: bool = True) -> Path:
    """Lay out a full working tree (inputs + config.yaml) and return the config path."""
    write_onet_dir(root)
    (root / "employment.csv").write_text(employment_text(), encoding="utf-8")
    if with_analytics:
        (root / "panel.csv").write_text(panel_text(), encoding="utf-8")
        (root / "external_index.csv").write_text(external_index_text(), encoding="utf-8")

    config: dict = {
        "paths": {
            "onet_dir": "onet",
            "employment_file": "employment.csv",
            "cache_dir": "cache",
            "output_dir": "out",
        },
        "employment_year": 2023,
        "models": [
            {"model_id": "judge-alpha", "endpoint_url": "mock://alpha"},
            {"model_id": "judge-beta", "endpoint_url": "mock://beta"},
            {"model_id": "judge-gamma", "endpoint_url": "mock://gamma"},
        ],
        "embedding": {"model_id": "mock-embedding-16d", "endpoint_url": "mock://embed"},
        "template": {"version": "v1"},
    }
    if with_analytics:
        config["analytics"] = {
            "score_unit": "raw",
            "external_indexes": [{"name": "reference_index", "file": "external_index.csv"}],
            "panel_file": "panel.csv",
            "window_years": 4,
            "regressions": [
                {
                    "id": "demp_on_teai",
                    "dependent": "dlog_employment",
                    "regressors": ["teai", "log_emp_initial"],
                    "fixed_effects": ["sector"],
                    "cluster": "sector",
                }
            ],
        }
    config_path = root / "config.yaml"
    config_path.write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    return config_path
