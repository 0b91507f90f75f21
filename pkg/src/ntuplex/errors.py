"""Exception hierarchy.

Each class carries an ``exit_code`` so the command line front end can map
failures onto its documented exit statuses without string matching.
"""


class NtuplexError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1
    category = "error"


class UserInputError(NtuplexError, ValueError):
    """Bad arguments, configuration or expressions supplied by the caller."""

    exit_code = 2
    category = "input"


class SchemaError(UserInputError):
    """Unknown or duplicate branch names, rows that do not match a schema."""

    category = "schema"


class ExprError(UserInputError):
    """Base for expression syntax and type errors."""

    category = "expression"


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class ExprTypeError(ExprError):
    pass


class SpecMismatchError(UserInputError):
    """Two aggregators with different structure were combined."""

    category = "aggregator"


class AggregatorFormatError(UserInputError):
    """A serialized aggregator or aggregator spec could not be decoded."""

    category = "aggregator"


class FormatError(NtuplexError):
    """The byte source is not a readable NTF file (bad magic, version, truncation)."""

    exit_code = 3
    category = "format"


class CorruptionError(FormatError):
    """A checksum did not verify or a payload failed to decompress."""

    category = "corruption"


class RemoteError(NtuplexError):
    """Transport failures and error statuses returned by the storage server."""

    exit_code = 4
    category = "remote"

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class TaskFailedError(NtuplexError):
    """A map task failed; the run was aborted.

    ``partial_report`` holds metrics for the tasks that did complete.
    """

    def __init__(self, task_id: int, path: str | None, cause: str, exit_code: int = 1):
        where = f" while reading {path}" if path else ""
        super().__init__(f"task {task_id} failed{where}: {cause}")
        self.task_id = task_id
        self.path = path
        self.cause = cause
        self.exit_code = exit_code
        self.partial_report = None

    def __reduce__(self):
        return (type(self), (self.task_id, self.path, self.cause, self.exit_code))
