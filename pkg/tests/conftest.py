import math

import numpy as np
import pytest

from cctlab.grid import (
    Bus,
    ContingencySpec,
    Line,
    Machine,
    NetworkCase,
    default_case,
)


@pytest.fixture(scope="session")
def wscc():
    return default_case()


def smib_case(p_m=0.8, h=5.0, xd=0.3, x_line=0.4, n_lines=2, inf_h=1e7, inf_xd=1e-5):
    """Machine at bus 2 feeding a stiff machine at bus 1 through parallel lines.

    The fault sits at the machine terminal, so fault-on electrical power is ~0.
    Clearing removes one of the parallel lines.
    """
    lines = tuple(Line(f"L{k}", 2, 1, 0.0, x_line) for k in range(1, n_lines + 1))
    return NetworkCase(
        system_base=100.0,
        frequency=60.0,
        buses=(Bus(1, "slack", 1.0), Bus(2, "PV", 1.0)),
        lines=lines,
        machines=(Machine("INF", 1, inf_h, inf_xd, 0.0, 0.0), Machine("G", 2, h, xd, 0.0, p_m)),
        contingencies=(ContingencySpec(1, 2, ("L1",)),) if n_lines > 1 else (),
        name="smib",
    )


def smib_oracle(p_m=0.8, h=5.0, xd=0.3, x_line=0.4, n_lines=2, inf_xd=1e-5, f=60.0):
    """Equal-area CCT for a terminal fault cleared by opening one line."""
    x_pre = x_line / n_lines
    x_post = x_line / (n_lines - 1)
    theta = math.asin(p_m * x_pre)
    v1, v2 = 1.0 + 0j, complex(math.cos(theta), math.sin(theta))
    cur = (v2 - v1) / (1j * x_pre)
    e_g = v2 + 1j * xd * cur
    e_inf = v1 - 1j * inf_xd * cur
    delta0 = np.angle(e_g) - np.angle(e_inf)
    pmax_post = abs(e_g) * abs(e_inf) / (xd + x_post + inf_xd)
    if p_m >= pmax_post:
        # no post-fault equilibrium
        return {"delta0": delta0, "pmax_post": pmax_post, "t_c": None, "e_g": e_g, "e_inf": e_inf}
    delta_max = math.pi - math.asin(p_m / pmax_post)
    cos_dc = (p_m * (delta_max - delta0) + pmax_post * math.cos(delta_max)) / pmax_post
    delta_c = math.acos(cos_dc)
    omega_s = 2 * math.pi * f
    t_c = math.sqrt(4 * h * (delta_c - delta0) / (omega_s * p_m))
    return {"delta0": delta0, "delta_c": delta_c, "t_c": t_c, "e_g": e_g, "e_inf": e_inf,
            "pmax_post": pmax_post}


# -- acceptance reporting ----------------------------------------------------
# Tests marked ``criterion(n, text)`` are grouped by n; a criterion passes only
# if every test carrying its number passes.

_criteria: dict[int, dict] = {}


@pytest.fixture
def note(request):
    """Attach a measured value to the test's criterion summary line."""
    def add(message: str) -> None:
        request.node.user_properties.append(("note", message))
    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, text = mark.args
    entry = _criteria.setdefault(number, {"text": text, "ok": True, "seen": False, "notes": []})
    if rep.when == "call":
        entry["notes"] += [v for k, v in rep.user_properties if k == "note"]
    entry["seen"] = entry["seen"] or rep.when == "call"
    if not rep.passed:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        verdict = "PASS" if e["ok"] and e["seen"] else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2}: {verdict}  {e['text']}")
        for msg in e["notes"]:
            terminalreporter.write_line(f"              {msg}")
