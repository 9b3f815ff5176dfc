import sys
from typing import Iterable, Optional

import pytest

from preof5g.codec import Direction, FlowId
from preof5g.netsim import FailureSpec
from preof5g.nodes import (
    FlowSpec,
    PathSpec,
    PreofConfig,
    TopologyTemplate,
    Variant,
    member_path_links,
)
from preof5g.scenario import LinkParams, Scenario

PATH_NAMES = "abcdefgh"


def make_scenario(
    variant: str = "pti_in_gnb",
    paths: int = 2,
    direction: str = "uplink",
    count: int = 100,
    gap: int = 1000,
    delay: int = 200,
    jitter: int = 0,
    loss: float = 0.0,
    skew: int = 0,
    proxy: bool = False,
    proxy_delay: int = 0,
    offload: bool = False,
    offload_delay: int = 100,
    co_located: bool = False,
    seed: int = 1,
    failures: Iterable[FailureSpec] = (),
    baseline_outage: Optional[int] = None,
    anchor: Optional[str] = None,
    seq_start: int = 0,
    window: int = 128,
    pof_timeout: Optional[int] = None,
    dscp: int = 0,
    payload_len: int = 1000,
    flows: Optional[list] = None,
) -> Scenario:
    """Build a scenario in code.

    ``loss`` and ``jitter`` apply to the member-path links between PTI and
    PTE; every other link is lossless with a fixed delay. ``skew`` is added
    to the last member path's core link.
    """
    v = Variant(variant)
    path_specs = [
        PathSpec(PATH_NAMES[i], f"upf-{PATH_NAMES[i]}", f"gnb-{PATH_NAMES[i]}" if v is Variant.PTI_IN_UE else None)
        for i in range(paths)
    ]
    if flows is None:
        flows = [
            FlowSpec(FlowId(1, Direction(direction)), "ue1", count, gap, payload_len, dscp)
        ]
    s = Scenario(
        name=f"{variant}-{direction}",
        template=TopologyTemplate(
            variant=v,
            path_count=paths,
            proxy_enabled=proxy,
            ordering_offload=offload,
            co_located_pti=co_located,
            proxy_delay=proxy_delay,
        ),
        paths=path_specs,
        flows=flows,
        failures=list(failures),
        seed=seed,
        preof=PreofConfig(window=window, pof_timeout=pof_timeout, seq_start=seq_start),
        baseline_outage=baseline_outage,
        baseline_anchor=anchor,
        link_default=LinkParams(delay_us=delay),
    )
    for spec in flows:
        for i in range(paths):
            links = member_path_links(s.template, s.paths, spec, i)
            for lid in links:
                s.links[lid] = LinkParams(delay_us=delay, jitter_us=jitter, loss=loss)
            if skew and i == paths - 1:
                core = links[1] if len(links) == 3 else links[-1]
                s.links[core] = LinkParams(delay_us=delay + skew, jitter_us=jitter, loss=loss)
    if offload:
        for slot in s.link_slots():
            if "pteo-" in slot.id:
                s.links[slot.id] = LinkParams(delay_us=offload_delay)
    return s


@pytest.fixture
def scenario_factory():
    return make_scenario


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
