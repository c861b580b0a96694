"""由已驗證的模型產生直線程式。"""

from __future__ import annotations

import logging
from typing import Dict, List, Optional, Sequence, Set

from ..core.errors import CodegenError
from ..model.expr import Expr, Var, free_vars, substitute
from ..model.ir import Block, Model
from ..model.validate import Loop, topological_blocks
from .program import AnnotatedProgram, LoopSpan, Statement

logger = logging.getLogger(__name__)


class _Generator:
    def __init__(self, model: Model) -> None:
        self.model = model
        self.statements: List[Statement] = []
        self.defined: Set[str] = set()
        self.emitted: Set[str] = set()
        self.blocks_by_output: Dict[str, Block] = {b.output: b for b in model.blocks}
        self.plant_outputs = {
            name: plant.id for plant in model.plants for name in plant.outputs
        }
        temps = {s.name for s in model.signals if s.temp}
        self.inlined = {b.id for b in model.blocks if b.kind == "constant" or b.output in temps}
        consumed = {name for block in model.blocks for name in block.inputs}
        self.sinks = {b.output for b in model.blocks if b.output not in consumed}
        self.subsystem: Optional[str] = None

    def inline(self, expr: Expr) -> Expr:
        mapping: Dict[str, Expr] = {}
        for name in sorted(free_vars(expr)):
            block = self.blocks_by_output.get(name)
            if block is not None and block.id in self.inlined:
                mapping[name] = self.inline(block.expression())
        return substitute(expr, mapping) if mapping else expr

    def need(self, name: str) -> None:
        if name in self.defined:
            return
        block = self.blocks_by_output.get(name)
        if block is None:
            self.statements.append(Statement.input(name, self.plant_outputs.get(name, "input")))
            self.defined.add(name)
            return
        if block.id in self.inlined:
            for item in block.inputs:
                self.need(item)
            return
        if block.subsystem is not None and block.subsystem != self.subsystem:
            raise CodegenError(f"訊號 {name} 由子系統 {block.subsystem} 產生，但在其迴路之前被使用")
        self.emit(block)

    def emit(self, block: Block) -> None:
        if block.id in self.emitted:
            return
        for item in block.inputs:
            self.need(item)
        self.statements.append(Statement.assign(block.output, self.inline(block.expression()), block.id))
        self.defined.add(block.output)
        self.emitted.add(block.id)
        if block.output in self.sinks:
            self.statements.append(Statement.output(Var(block.output), block.id))

    def external_inputs(self, name: str, members: Set[str]) -> None:
        block = self.blocks_by_output.get(name)
        if block is not None and block.id in members:
            return
        if block is not None and block.id in self.inlined:
            for item in block.inputs:
                self.external_inputs(item, members)
            return
        self.need(name)

    def loop(self, loop: Loop) -> LoopSpan:
        ordered, _ = topological_blocks(loop.blocks)
        span_blocks = [b for b in ordered if b.id not in self.inlined]
        if not span_blocks:
            raise CodegenError(f"迴路 {loop.index} 沒有可產生敘述的方塊")
        members = {b.id for b in span_blocks}
        self.subsystem = loop.subsystem
        for block in span_blocks:
            for name in block.inputs:
                self.external_inputs(name, members)
        for name in loop.plant.outputs:
            self.need(name)
        first = len(self.statements)
        for block in span_blocks:
            self.emit(block)
        self.subsystem = None
        return LoopSpan(loop.index, first, len(self.statements) - 1, loop.subsystem, loop.plant.id)

    def remaining(self) -> None:
        ordered, _ = topological_blocks(self.model.blocks)
        for block in ordered:
            if block.id not in self.inlined and block.id not in self.emitted:
                self.subsystem = block.subsystem
                self.emit(block)
        self.subsystem = None


def generate_program(model: Model, loops: Sequence[Loop]) -> AnnotatedProgram:
    """每個非內嵌方塊一條指派，迴路依宣告順序展開，其餘膠合程式碼置於最後。"""

    generator = _Generator(model)
    spans = [generator.loop(loop) for loop in loops]
    generator.remaining()
    program = AnnotatedProgram(
        name=model.name,
        statements=tuple(generator.statements),
        spans=tuple(spans),
    )
    logger.info(
        "program_generated",
        extra={"model": model.name, "statements": len(program.statements), "spans": len(spans)},
    )
    return program
