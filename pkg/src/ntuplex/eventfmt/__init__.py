"""NTF columnar event files: layout, writer, selective reader and byte sources."""

from .layout import (
    DEFAULT_BASKET_BYTES,
    FOOTER_CRC_SIZE,
    HEADER_SIZE,
    MAGIC,
    RECORD_SIZE,
    BasketRef,
    BranchDescriptor,
    BranchType,
    EventBatch,
    Schema,
    VarColumn,
)
from .reader import read_basket, read_events, read_header, read_schema, read_table
from .sources import (
    ByteCounter,
    ByteSource,
    BytesSource,
    FileSource,
    bytes_read_accounting,
    is_remote,
    open_source,
)
from .writer import NTFWriter, write_columns, write_dataset

__all__ = [
    "DEFAULT_BASKET_BYTES",
    "FOOTER_CRC_SIZE",
    "HEADER_SIZE",
    "MAGIC",
    "RECORD_SIZE",
    "BasketRef",
    "BranchDescriptor",
    "BranchType",
    "ByteCounter",
    "ByteSource",
    "BytesSource",
    "EventBatch",
    "FileSource",
    "NTFWriter",
    "Schema",
    "VarColumn",
    "bytes_read_accounting",
    "is_remote",
    "open_source",
    "read_basket",
    "read_events",
    "read_header",
    "read_schema",
    "read_table",
    "write_columns",
    "write_dataset",
]
