def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion."""
    reports = []
    for outcome in ("passed", "failed", "error"):
        reports += [r for r in terminalreporter.stats.get(outcome, []) if "test_acceptance.py::" in r.nodeid]
    reports = [r for r in reports if r.when == "call" or r.outcome != "passed"]
    if not reports:
        return
    terminalreporter.section("acceptance criteria")
    seen = set()
    for r in sorted(reports, key=lambda r: r.nodeid):
        if r.nodeid in seen:
            continue
        seen.add(r.nodeid)
        props = dict(r.user_properties)
        label = props.get("criterion", r.nodeid.split("::")[-1])
        detail = props.get("detail", "")
        terminalreporter.write_line(f"{label}: {'PASS' if r.passed else 'FAIL'}  {detail}")
