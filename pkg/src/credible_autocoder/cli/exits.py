from __future__ import annotations

from typing import NoReturn

import typer

from ..core.errors import (
    AutocoderError,
    ConfigurationError,
    ModelParseError,
    ModelValidationError,
)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

_USAGE_ERRORS = (OSError, ModelParseError, ModelValidationError, ConfigurationError)


def exit_code_for(error: BaseException) -> int:
    """使用或輸入輸出錯誤為 2，其餘管線失敗為 1。"""

    if isinstance(error, _USAGE_ERRORS):
        return EXIT_USAGE
    return EXIT_FAILURE


def exit_with_error(error: BaseException) -> NoReturn:
    """輸出錯誤訊息並以對應代碼結束程式。"""

    code = exit_code_for(error)
    tag = "USAGE" if code == EXIT_USAGE else "FAILED"
    if isinstance(error, (AutocoderError, OSError)):
        typer.echo(f"[{tag}] {error}", err=True)
    else:
        typer.echo(f"[{tag}] {type(error).__name__}: {error}", err=True)
    raise typer.Exit(code=code)


def finish(success: bool) -> None:
    if not success:
        raise typer.Exit(code=EXIT_FAILURE)
