"""
Structured text reports rendered with jinja2.

Templates live in reshard/templates/. Floats go through fixed-format filters
so identical inputs render byte-identical text.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from jinja2 import Environment, FileSystemLoader, StrictUndefined

from .campaign import CampaignSummary
from .elastic import ScaleTimeline
from .executor import sim_time_ratios
from .models import Scenario
from .pipeline import Prepared, RunOutcome
from .planners import first_step_samples
from .routing import TransitionPlan

logger = logging.getLogger(__name__)


def _seconds(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.6f}"


def _percent(value: Optional[float]) -> str:
    return "no overlap needed" if value is None else f"{value * 100:.2f}%"


def _ratio(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.2f}x"


_env = Environment(
    loader=FileSystemLoader(str(Path(__file__).parent / "templates")),
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=True,
    undefined=StrictUndefined,
    autoescape=False,
)
_env.filters["seconds"] = _seconds
_env.filters["percent"] = _percent
_env.filters["ratio"] = _ratio


def _render(template: str, **context) -> str:
    return _env.get_template(template).render(**context)


def _plan_context(prepared: Prepared) -> Dict:
    plan = prepared.plan
    return {
        "scenario": prepared.scenario,
        "plan": plan,
        "schedule": prepared.schedule,
        "transfers": len(plan.transfers()),
        "first_step": first_step_samples(plan.dataset),
    }


def render_plan_summary(scenario: Scenario, plan: TransitionPlan) -> str:
    """Scalar and dataloader plans; printed on stderr next to the plan dump."""
    return _render(
        "plan_summary.txt.j2", scenario=scenario, plan=plan,
        transfers=len(plan.transfers()), first_step=first_step_samples(plan.dataset),
    )


def render_exec_report(prepared: Prepared, outcomes: Sequence[RunOutcome], trace: bool = False) -> str:
    return _render("exec_report.txt.j2", outcomes=list(outcomes), trace=trace, **_plan_context(prepared))


def render_ablation(runs: List[Dict]) -> str:
    """`runs` holds one {"label", "outcomes"} entry per direction."""
    rows = [
        {"label": run["label"], "outcomes": run["outcomes"],
         "ratios": sim_time_ratios(o.report for o in run["outcomes"])}
        for run in runs
    ]
    return _render("ablation.txt.j2", runs=rows)


def render_campaign(summary: CampaignSummary) -> str:
    return _render("campaign.txt.j2", summary=summary)


def render_timeline(timelines: Sequence[ScaleTimeline], name: str = "scale event") -> str:
    return _render("timeline.txt.j2", timelines=list(timelines), name=name)


def render_history(rows: List[Dict]) -> str:
    return _render("history.txt.j2", rows=rows)
