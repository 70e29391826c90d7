"""Exception types shared across the package."""

from __future__ import annotations


class ToolDagError(Exception):
    """Base class for every error raised by tooldag."""


class CycleDetected(ToolDagError):
    def __init__(self, task_ids):
        self.task_ids = tuple(task_ids)
        super().__init__(f"dependency cycle among {', '.join(self.task_ids)}")


class PlanFormatError(ToolDagError):
    """Raised by the task-list parser."""


class MalformedJson(PlanFormatError):
    def __init__(self, position: int, detail: str = ""):
        self.position = position
        super().__init__(f"malformed JSON at position {position}: {detail}".rstrip(": "))


class MissingField(PlanFormatError):
    def __init__(self, task_index: int, field: str):
        self.task_index = task_index
        self.field = field
        super().__init__(f"task {task_index} is missing field {field!r}")


class BadFieldType(PlanFormatError):
    def __init__(self, task_index: int, field: str, expected: str):
        self.task_index = task_index
        self.field = field
        super().__init__(f"task {task_index} field {field!r} must be {expected}")


class BadTaskId(PlanFormatError):
    def __init__(self, value):
        self.value = value
        super().__init__(f"bad task id {value!r}")


class BadRefSyntax(PlanFormatError):
    def __init__(self, value):
        self.value = value
        super().__init__(f"bad symbolic reference {value!r}")


class TranscriptFormatError(ToolDagError):
    def __init__(self, tag: str, position: int, message: str):
        self.tag = tag
        self.position = position
        super().__init__(message)


class UnclosedTag(TranscriptFormatError):
    def __init__(self, tag: str, position: int):
        super().__init__(tag, position, f"<{tag}> opened at {position} is never closed")


class UnknownTag(TranscriptFormatError):
    def __init__(self, tag: str, position: int):
        super().__init__(tag, position, f"unexpected tag {tag!r} at {position} inside a block")


class MissingTag(TranscriptFormatError):
    def __init__(self, tag: str):
        super().__init__(tag, -1, f"required <{tag}> block not found")


class DecodeError(ToolDagError):
    def __init__(self, line: int, detail: str):
        self.line = line
        super().__init__(f"line {line}: {detail}")


class InvalidConfig(ToolDagError):
    pass


class EmptyInput(ToolDagError):
    pass


class FileUnreadable(ToolDagError):
    pass


class FormatUnknown(ToolDagError):
    pass


class InfeasibleTemplate(ToolDagError):
    pass


class PoolTooSmall(ToolDagError):
    pass


class UnresolvableRef(ToolDagError):
    def __init__(self, task_id: str, ref):
        self.task_id = task_id
        self.ref = ref
        super().__init__(f"{task_id}: cannot resolve {ref}")


class UnknownTool(ToolDagError):
    def __init__(self, toolname: str):
        self.toolname = toolname
        super().__init__(f"unknown tool {toolname!r}")


class NoFailure(ToolDagError):
    pass


class ScenarioInfeasible(ToolDagError):
    pass


class BadProportions(ToolDagError):
    pass


class TooLarge(ToolDagError):
    pass


class RemoteUnavailable(ToolDagError):
    pass
