"""Provenance header lines written at the top of every artifact."""

from __future__ import annotations

__version__ = "0.1.0"
TOOL = "biascal"


def header_line(subcommand: str, seed: int | None, **extra) -> str:
    """Single ``#`` comment line naming tool version, subcommand and seed."""
    parts = [f"# {TOOL} {__version__}", f"subcommand={subcommand}", f"seed={seed}"]
    parts += [f"{k}={v}" for k, v in extra.items()]
    return " ".join(parts) + "\n"


def parse_header(line: str) -> dict[str, str]:
    if not line.startswith("#"):
        return {}
    out = {}
    toks = line[1:].split()
    if len(toks) >= 2 and toks[0] == TOOL:
        out["tool"], out["version"] = toks[0], toks[1]
    for tok in toks:
        if "=" in tok:
            k, v = tok.split("=", 1)
            out[k] = v
    return out
