from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import typer
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from ..config.settings import AppSettings, get_settings
from ..config.validators import validate_settings
from ..core.errors import AutocoderError, ConfigurationError
from ..core.logging import configure_logging
from ..core.utils import format_number
from ..pipeline.runner import AutocodeResult, AutocodingPipeline, CheckResult, LqrSummary
from .exits import exit_with_error, finish

app = typer.Typer(
    help="Credible autocoder：由方塊圖模型產生帶合約的控制程式並驗證", no_args_is_help=True
)
console = Console()

_FAILURES = (AutocoderError, OSError)

OUT_DIR_OPTION = typer.Option(
    None, "--out-dir", help="輸出目錄（預設讀取 AUTOCODER_OUTPUT_DIR）"
)


@app.callback()
def main_callback(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="輸出 INFO 等級日誌"),
) -> None:
    """設定日誌等級。"""

    try:
        level = get_settings().log_level_value
    except ValidationError as error:
        exit_with_error(ConfigurationError(f"環境設定錯誤: {error}"))
    configure_logging(logging.INFO if verbose else level)


def _settings(out_dir: Optional[Path] = None, **overrides: object) -> AppSettings:
    """環境設定加上命令列覆寫，覆寫後重新檢查。"""

    try:
        base = get_settings()
    except ValidationError as error:
        raise ConfigurationError(f"環境設定錯誤: {error}") from error
    update = {key: value for key, value in overrides.items() if value is not None}
    if out_dir is not None:
        update["output_dir"] = out_dir
    settings = base.model_copy(update=update)
    validate_settings(settings)
    return settings


def _vector_option(text: Optional[str], size: int, name: str) -> Optional[List[float]]:
    if text is None:
        return None
    try:
        values = [float(item) for item in text.split(",") if item.strip()]
    except ValueError as error:
        raise typer.BadParameter(f"{name} 需為逗號分隔的數字", param_hint=name) from error
    if len(values) != size:
        raise typer.BadParameter(f"{name} 需要 {size} 個數字，得到 {len(values)}", param_hint=name)
    return values


@app.command("autocode")
def command_autocode(
    model_path: Path = typer.Argument(..., help="模型檔（*.model.json）"),
    out_dir: Optional[Path] = OUT_DIR_OPTION,
) -> None:
    """產生帶註解的 Matlab 風格程式與 VC 檔。"""

    try:
        pipeline = AutocodingPipeline(_settings(out_dir))
        result = pipeline.autocode(model_path)
    except _FAILURES as error:
        exit_with_error(error)
    _print_autocode(result)


@app.command("check")
def command_check(
    model_path: Path = typer.Argument(..., help="模型檔或先前輸出的 .vc 檔"),
    out_dir: Optional[Path] = OUT_DIR_OPTION,
    samples: Optional[int] = typer.Option(None, "--samples", help="反例搜尋的取樣數"),
    depth: Optional[int] = typer.Option(None, "--depth", help="區間二分的最大深度"),
    seed: Optional[int] = typer.Option(None, "--seed", help="取樣亂數種子"),
    workers: Optional[int] = typer.Option(None, "--workers", help="平行判定的執行緒數"),
) -> None:
    """執行完整管線並判定所有 VC；全部 VERIFIED 時結束碼為 0。"""

    try:
        settings = _settings(out_dir, samples=samples, depth=depth, seed=seed, workers=workers)
        result = AutocodingPipeline(settings).check(model_path)
    except _FAILURES as error:
        exit_with_error(error)
    _print_check(result)
    finish(result.all_verified)


@app.command("simulate")
def command_simulate(
    model_path: Path = typer.Argument(..., help="模型檔（*.model.json）"),
    out_dir: Optional[Path] = OUT_DIR_OPTION,
    dt: Optional[float] = typer.Option(None, "--dt", help="積分步長（預設與註解相同）"),
    steps: Optional[int] = typer.Option(None, "--steps", help="模擬步數"),
    x0: Optional[str] = typer.Option(None, "--x0", help="初始偏差 x̃，例如 0.5,0,0"),
    z0: Optional[str] = typer.Option(None, "--z0", help="初始流形座標 z，例如 0.2,-0.1"),
) -> None:
    """閉迴路模擬並以不變量監看器檢查軌跡；無違反時結束碼為 0。"""

    x_tilde = _vector_option(x0, 3, "--x0")
    manifold = _vector_option(z0, 2, "--z0")
    try:
        pipeline = AutocodingPipeline(_settings(out_dir))
        result = pipeline.simulate(model_path, dt=dt, steps=steps, x0=x_tilde, z0=manifold)
    except _FAILURES as error:
        exit_with_error(error)

    table = Table(title="Invariant monitors")
    table.add_column("monitor")
    table.add_column("status")
    table.add_column("max")
    table.add_column("first violation")
    for item in result.summaries:
        table.add_row(
            item.name,
            "VIOLATED" if item.violated else "OK",
            format_number(item.max_value),
            "-" if item.first_violation is None else str(item.first_violation),
        )
    console.print(table)
    console.print(f"steps: {len(result.trace) - 1}")
    _print_paths(result.output_paths)
    finish(not result.violated)


@app.command("lqr")
def command_lqr(
    model_path: Path = typer.Argument(..., help="模型檔（*.model.json）"),
) -> None:
    """計算 LQR 增益、Lyapunov 矩陣與閉迴路譜半徑。"""

    try:
        summary = AutocodingPipeline(_settings()).lqr(model_path)
    except _FAILURES as error:
        exit_with_error(error)
    _print_lqr(summary)


def _print_paths(paths: Sequence[Path]) -> None:
    for path in paths:
        console.print(f"wrote {path}")


def _print_autocode(result: AutocodeResult) -> None:
    """輸出迴路摘要。"""

    table = Table(title=f"{result.model.name}: {len(result.loops)} loop(s)")
    table.add_column("loop")
    table.add_column("subsystem")
    table.add_column("plant")
    table.add_column("states")
    table.add_column("invariant")
    for loop in result.loops:
        table.add_row(
            f"#{loop.index}",
            loop.subsystem,
            f"{loop.plant.id} ({loop.plant.kind})",
            ", ".join(loop.states),
            "-" if loop.invariant is None else f"{loop.invariant.id} ({loop.invariant.kind})",
        )
    console.print(table)
    console.print(
        f"statements: {len(result.program.statements)}  contracts: {len(result.program.contracts)}"
    )
    _print_paths(result.output_paths)


def _print_check(result: CheckResult) -> None:
    table = Table(title=f"{result.program.name}: verification conditions")
    table.add_column("vc")
    table.add_column("status")
    table.add_column("samples")
    table.add_column("boxes")
    table.add_column("depth")
    for verdict in result.verdicts:
        table.add_row(
            verdict.vc,
            verdict.status,
            str(verdict.samples),
            str(verdict.boxes),
            str(verdict.depth),
        )
    console.print(table)
    for verdict in result.verdicts:
        if verdict.witness:
            values = ", ".join(
                f"{name}={[format_number(v) for v in verdict.witness[name]]}"
                for name in sorted(verdict.witness)
            )
            console.print(f"{verdict.vc} witness: {values}", markup=False)
        if verdict.reason and not verdict.verified:
            console.print(f"{verdict.vc} reason: {verdict.reason}", markup=False)
    for guard in result.guards:
        console.print(f"guard {guard.name}: {'SAFE' if guard.safe else 'UNSAFE'} {guard.detail}")
    _print_paths(result.output_paths)


def _matrix_table(title: str, matrix: np.ndarray) -> Table:
    data = np.atleast_2d(matrix)
    table = Table(title=title, show_header=False, min_width=len(title) + 4)
    for _ in range(data.shape[1]):
        table.add_column(justify="right")
    for row in data:
        table.add_row(*(format_number(float(value)) for value in row))
    return table


def _print_lqr(summary: LqrSummary) -> None:
    console.print(_matrix_table("K", summary.gain))
    console.print(_matrix_table("Riccati P", summary.riccati))
    console.print(_matrix_table("Lyapunov P", summary.lyapunov))
    eigen = ", ".join(
        f"{value.real:.6g}{value.imag:+.6g}j" if abs(value.imag) > 0 else f"{value.real:.6g}"
        for value in summary.eigenvalues
    )
    console.print(f"closed-loop eigenvalues: {eigen}")
    console.print(f"spectral radius: {summary.spectral_radius:.6g}")
