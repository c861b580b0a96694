from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class Diagnostic(BaseModel):
    """模型檔診斷訊息。"""

    location: str
    line: Optional[int] = None
    message: str

    def render(self) -> str:
        where = self.location if self.line is None else f"{self.location} (line {self.line})"
        return f"{where}: {self.message}"


class RunManifest(BaseModel):
    """單次執行的可重現紀錄。"""

    input_path: str
    subcommand: str
    options: Dict[str, Any] = Field(default_factory=dict)
    output_paths: List[str] = Field(default_factory=list)
    version: str

    def to_json(self) -> str:
        """以排序鍵輸出，確保逐位元組一致。"""

        return json.dumps(self.model_dump(mode="json"), sort_keys=True)

    def with_outputs(self, paths: List[Path]) -> "RunManifest":
        return self.model_copy(update={"output_paths": [str(path) for path in paths]})
