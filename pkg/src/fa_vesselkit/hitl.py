"""Bookkeeping for the predict / correct / retrain labeling loop.

Annotation effort is counted as pixels the annotator added to and removed
from the network's prediction. The network itself lives outside this
package: :func:`run_predict_hook` shells out to a configured command and
reads back the masks it writes.
"""
from __future__ import annotations

import json
import os
import shlex
import subprocess
from dataclasses import asdict, dataclass, field

import numpy as np

from .raster import as_mask, load_mask

__all__ = [
    "DiffReport",
    "ManifestEntry",
    "IterationManifest",
    "mask_diff",
    "advance_iteration",
    "run_predict_hook",
]

FORMAT_VERSION = "fa-vesselkit/manifest-1"


@dataclass(frozen=True)
class DiffReport:
    added: int
    removed: int
    pct_added: float | None  # relative to the corrected mask's vessel count
    pct_removed: float | None

    def to_dict(self) -> dict:
        return asdict(self)

    def summary(self) -> str:
        def pct(v):
            return "n/a" if v is None else f"{v:.2f}%"

        return (
            f"added {self.added} px ({pct(self.pct_added)}), "
            f"removed {self.removed} px ({pct(self.pct_removed)})"
        )


def mask_diff(before, after) -> DiffReport:
    b = as_mask(before)
    a = as_mask(after)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {b.shape} vs {a.shape}")
    added = int(np.count_nonzero(a & ~b))
    removed = int(np.count_nonzero(b & ~a))
    base = int(np.count_nonzero(a))
    if base:
        return DiffReport(added, removed, 100.0 * added / base, 100.0 * removed / base)
    return DiffReport(added, removed, None, None)


@dataclass
class ManifestEntry:
    image: str
    labels: str
    roi: str | None
    source: str  # "transferred" or "corrected"
    iteration: int = 0
    effort: dict | None = None

    def __post_init__(self):
        if self.source not in ("transferred", "corrected"):
            raise ValueError(f"unknown entry source {self.source!r}")


@dataclass
class IterationManifest:
    iteration: int = 0
    entries: list[ManifestEntry] = field(default_factory=list)
    predict_command: str | None = None

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "iteration": self.iteration,
            "predict_command": self.predict_command,
            "entries": [asdict(e) for e in self.entries],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "IterationManifest":
        return cls(
            iteration=int(data.get("iteration", 0)),
            entries=[ManifestEntry(**e) for e in data.get("entries", [])],
            predict_command=data.get("predict_command"),
        )

    def save(self, path) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "IterationManifest":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def total_effort(self) -> tuple[int, int]:
        added = sum(e.effort["added"] for e in self.entries if e.effort)
        removed = sum(e.effort["removed"] for e in self.entries if e.effort)
        return added, removed


def advance_iteration(manifest: IterationManifest, predicted, corrected, paths=None) -> IterationManifest:
    """Record one round of corrections and return the next manifest.

    ``predicted`` and ``corrected`` are aligned lists of masks (arrays or PNG
    paths). ``paths`` gives the ``(image, labels, roi)`` files for each new
    training entry; when masks were passed as paths, the corrected path is
    used for the labels.
    """
    predicted = list(predicted)
    corrected = list(corrected)
    if len(predicted) != len(corrected):
        raise ValueError("predicted and corrected lists are misaligned")
    if paths is not None and len(paths) != len(corrected):
        raise ValueError("paths must align with the corrected masks")

    nxt = manifest.iteration + 1
    entries = list(manifest.entries)
    for i, (pred, corr) in enumerate(zip(predicted, corrected)):
        pm = load_mask(pred) if isinstance(pred, (str, os.PathLike)) else as_mask(pred)
        cm = load_mask(corr) if isinstance(corr, (str, os.PathLike)) else as_mask(corr)
        report = mask_diff(pm, cm)
        if paths is not None:
            image, labels, roi = paths[i]
        else:
            image = f"iter{nxt}/image{i}"
            labels = str(corr) if isinstance(corr, (str, os.PathLike)) else f"iter{nxt}/labels{i}"
            roi = None
        entries.append(ManifestEntry(image, labels, roi, "corrected", nxt, report.to_dict()))
    return IterationManifest(nxt, entries, manifest.predict_command)


def run_predict_hook(manifest: IterationManifest, images, out_dir, timeout: float | None = None) -> list[str]:
    """Train on the manifest and predict ``images`` with the external command.

    The command template may use ``{manifest}``, ``{images}`` (space separated)
    and ``{out_dir}``. It must write one mask PNG per image, named after the
    image stem with a ``_pred.png`` suffix. Returns the predicted mask paths.
    """
    if not manifest.predict_command:
        raise ValueError("manifest has no predict_command configured")
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "manifest.json")
    manifest.save(manifest_path)
    cmd = manifest.predict_command.format(
        manifest=shlex.quote(manifest_path),
        images=" ".join(shlex.quote(str(p)) for p in images),
        out_dir=shlex.quote(str(out_dir)),
    )
    subprocess.run(cmd, shell=True, check=True, timeout=timeout)
    outputs = []
    for img in images:
        stem = os.path.splitext(os.path.basename(str(img)))[0]
        out = os.path.join(out_dir, f"{stem}_pred.png")
        if not os.path.exists(out):
            raise FileNotFoundError(f"predict command did not produce {out}")
        outputs.append(out)
    return outputs
