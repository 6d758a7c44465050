"""Bundled golden fixtures.

``golden_session.txt`` is a recorded interactive proving session for a
sum-of-cyclic-fractions inequality: six sketch/feedback rounds of repair
ending in a verified final answer. It pins down the delimiter grammar,
verdict classification over real checker payloads, and full rollout
replay. ``golden_prompt.txt`` is the problem statement that session
answered.
"""

from __future__ import annotations

import re
from importlib import resources


def load_golden_session() -> str:
    return (resources.files("proofloop") / "fixtures" / "golden_session.txt").read_text("utf-8")


def load_golden_prompt() -> str:
    return (resources.files("proofloop") / "fixtures" / "golden_prompt.txt").read_text("utf-8")


def golden_feedback_payloads() -> list[str]:
    """The session's raw feedback payloads, extracted by direct scan."""
    text = load_golden_session()
    return re.findall(r"<REPL>\n(.*?)\n</REPL>\n", text, re.DOTALL)
