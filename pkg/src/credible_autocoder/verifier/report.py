"""驗證報告：逐行文字格式與 JSON 摘要，兩者皆不含時間戳以保持可重現。"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from ..codegen.program import DomainFact
from ..core.types import RunManifest
from ..core.utils import format_number
from .bounds import RuntimeGuard
from .checks import Verdict

STATUSES = ("VERIFIED", "FALSIFIED", "UNKNOWN")


def _vector(values: Sequence[float]) -> str:
    return "[" + ", ".join(format_number(value) for value in values) + "]"


def _counts(verdicts: Sequence[Verdict]) -> Dict[str, int]:
    return {status: sum(1 for v in verdicts if v.status == status) for status in STATUSES}


def write_report(
    verdicts: Sequence[Verdict],
    manifest: RunManifest,
    bounds: Optional[Mapping[str, DomainFact]] = None,
    guards: Sequence[RuntimeGuard] = (),
) -> str:
    lines: List[str] = ["# credible-autocoder verification report", f"manifest {manifest.to_json()}"]
    for verdict in verdicts:
        violation = "-" if verdict.max_violation is None else format_number(verdict.max_violation)
        lines.append(
            f"vc {verdict.vc} {verdict.status} samples={verdict.samples} boxes={verdict.boxes} "
            f"depth={verdict.depth} max_violation={violation}"
        )
        if verdict.witness:
            for name in sorted(verdict.witness):
                lines.append(f"  witness {name} = {_vector(verdict.witness[name])}")
        if verdict.reason:
            lines.append(f"  reason {verdict.reason}")
    for name in sorted(bounds or {}):
        fact = (bounds or {})[name]
        lines.append(f"bound {name} {_vector(fact.lo)} {_vector(fact.hi)} {fact.provenance}")
    for guard in guards:
        lines.append(f"guard {guard.name} {'SAFE' if guard.safe else 'UNSAFE'} {guard.detail}")
    counts = _counts(verdicts)
    lines.append(" ".join(["summary"] + [f"{key.lower()}={value}" for key, value in counts.items()]))
    return "\n".join(lines) + "\n"


def summary_payload(
    verdicts: Sequence[Verdict],
    manifest: RunManifest,
    bounds: Optional[Mapping[str, DomainFact]] = None,
    guards: Sequence[RuntimeGuard] = (),
) -> str:
    """機器可讀摘要（鍵排序）。"""

    payload = {
        "manifest": manifest.model_dump(mode="json"),
        "verdicts": [verdict.model_dump(mode="json") for verdict in verdicts],
        "bounds": {
            name: {"lo": list(fact.lo), "hi": list(fact.hi), "provenance": fact.provenance}
            for name, fact in sorted((bounds or {}).items())
        },
        "guards": [{"name": g.name, "safe": g.safe, "detail": g.detail} for g in guards],
        "counts": _counts(verdicts),
        "all_verified": all(v.verified for v in verdicts),
    }
    return json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True)


def save_reports(
    out_dir: Path,
    stem: str,
    verdicts: Sequence[Verdict],
    manifest: RunManifest,
    bounds: Optional[Mapping[str, DomainFact]] = None,
    guards: Sequence[RuntimeGuard] = (),
) -> Tuple[Path, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / f"{stem}.report.txt"
    summary_path = out_dir / f"{stem}.summary.json"
    recorded = manifest.with_outputs([report_path, summary_path])
    report_path.write_text(write_report(verdicts, recorded, bounds, guards), encoding="utf-8")
    summary_path.write_text(summary_payload(verdicts, recorded, bounds, guards), encoding="utf-8")
    return report_path, summary_path
