"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

from __future__ import annotations

import time
from contextlib import contextmanager

LINES: list[str] = []


@contextmanager
def criterion(number: int, title: str, budget_s: float):
    """Record the outcome of the enclosed checks; the runtime budget is part of the verdict.

    Yields a dict the caller can fill with measured values for the report line.
    """
    detail: dict = {}
    start = time.perf_counter()
    try:
        yield detail
    except BaseException as exc:
        elapsed = time.perf_counter() - start
        LINES.append(_line("FAIL", number, title, elapsed, detail, f"{type(exc).__name__}: {exc}".splitlines()[0]))
        raise
    elapsed = time.perf_counter() - start
    ok = elapsed < budget_s
    LINES.append(_line("PASS" if ok else "FAIL", number, title, elapsed, detail,
                       None if ok else f"over the {budget_s:.0f} s budget"))
    assert ok, f"criterion {number} took {elapsed:.1f} s, budget {budget_s:.0f} s"


def _line(verdict, number, title, elapsed, detail, note):
    facts = ", ".join(f"{k}={_fmt(v)}" for k, v in detail.items())
    text = f"[{verdict}] criterion {number:2d} {title} ({elapsed:.1f} s)"
    if facts:
        text += f" {facts}"
    if note:
        text += f" :: {note}"
    return text


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)
