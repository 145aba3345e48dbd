"""critloop: critique-revision loops for program synthesis, at desk scale.

Subpackages cover the full pipeline: refinement-dynamics simulation (sim),
sandboxed test execution (sandbox), execution-grounded hint and SFT-record
synthesis (hints), critique prompting/parsing (critique), an OpenAI-compatible
chat client with deterministic mocks (client), loop orchestration (loop),
evaluation metrics (metrics), group-relative policy optimization on a toy
environment (grpo), dataset curation (dataset), and the command line (cli).
"""
from __future__ import annotations

__version__ = "0.1.0"
