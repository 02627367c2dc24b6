"""Read and write posterior draws as CSV (``chain,iter,<params...>``)."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from ..provenance import parse_header
from .models import CONSTANT, LINEAR, PARAMS, McmcConfig, PosteriorSamples


def format_draws(samples: PosteriorSamples, header: str | None = None) -> str:
    buf = io.StringIO()
    if header:
        buf.write(header)
    w = csv.writer(buf, lineterminator="\n")
    names = samples.param_names
    w.writerow(["chain", "iter", *names])
    arrays = [samples.draws[n] for n in names]
    for c in range(samples.n_chains):
        for i in range(arrays[0].shape[1]):
            w.writerow([c, i, *(repr(float(a[c, i])) for a in arrays)])
    return buf.getvalue()


def write_draws(samples: PosteriorSamples, path, header: str | None = None) -> None:
    Path(path).write_text(format_draws(samples, header), encoding="utf-8")


def read_draws(path) -> PosteriorSamples:
    """Load a draws CSV; the model is inferred from its columns."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"draws file not found: {path}")
    meta: dict[str, str] = {}
    lines = path.read_text(encoding="utf-8").splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            meta.update(parse_header(line))
        elif line.strip():
            body.append(line)
    if not body:
        raise ValidationError(f"{path}: no header row")
    rows = list(csv.reader(body))
    header = rows[0]
    for model in (LINEAR, CONSTANT):
        if header == ["chain", "iter", *PARAMS[model]]:
            break
    else:
        raise ValidationError(f"{path}: unrecognised draws header {header}")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if data.size == 0:
        raise ValidationError(f"{path}: no draws")
    chains = data[:, 0].astype(int)
    n_chains = chains.max() + 1
    per = np.bincount(chains, minlength=n_chains)
    if np.any(per != per[0]):
        raise ValidationError(f"{path}: chains have unequal lengths {per.tolist()}")
    order = np.lexsort((data[:, 1], chains))
    data = data[order]
    draws = {
        name: data[:, 2 + j].reshape(n_chains, per[0]) for j, name in enumerate(PARAMS[model])
    }
    seed = int(meta["seed"]) if meta.get("seed", "None") not in ("None", "") else 0
    cfg = McmcConfig(chains=int(n_chains), samples=int(per[0]), burn_in=0, seed=seed)
    return PosteriorSamples(model=model, draws=draws, config=cfg)
