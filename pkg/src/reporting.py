"""
CSV and text-table emitters shared by the profile, bench and eval reports,
and the schema check that re-parses every CSV the CLI writes.
"""
import logging
import os
from typing import Dict, List, Optional, Tuple

import pandas as pd

from .errors import SchemaError

logger = logging.getLogger(__name__)

# kind -> fixed leading columns and their types; eval reports add one
# float column per task plus 'average' / 'perplexity'.
SCHEMAS: Dict[str, List[Tuple[str, str]]] = {
    "profile": [("layer", "int"), ("cosine_sim", "float"), ("n_samples", "int")],
    "bench": [("label", "str"), ("mode", "str"), ("k", "int"), ("keep_last", "bool"),
              ("mean_s", "float"), ("std_s", "float"), ("improvement_pct", "float")],
    "eval": [("label", "str"), ("mode", "str"), ("k", "int"), ("keep_last", "bool")],
}
OPEN_SCHEMAS = {"eval"}


def _check_type(series: pd.Series, kind: str) -> bool:
    if kind == "int":
        return pd.api.types.is_integer_dtype(series)
    if kind == "float":
        return pd.api.types.is_numeric_dtype(series) and not pd.api.types.is_bool_dtype(series)
    if kind == "bool":
        return pd.api.types.is_bool_dtype(series)
    return pd.api.types.is_object_dtype(series) or pd.api.types.is_string_dtype(series)


def validate_frame(df: pd.DataFrame, kind: str) -> None:
    if kind not in SCHEMAS:
        raise SchemaError(f"unknown report kind '{kind}'")
    schema = SCHEMAS[kind]
    names = [name for name, _ in schema]
    head = list(df.columns[:len(names)])
    if head != names:
        raise SchemaError(f"{kind} report columns {list(df.columns)} do not start with {names}")
    if kind not in OPEN_SCHEMAS and len(df.columns) != len(names):
        raise SchemaError(f"{kind} report has extra columns: {list(df.columns[len(names):])}")
    for name, col_type in schema:
        if not _check_type(df[name], col_type):
            raise SchemaError(f"{kind} column '{name}' has dtype {df[name].dtype}, expected {col_type}")
    for name in df.columns[len(names):]:
        if not _check_type(df[name], "float"):
            raise SchemaError(f"{kind} column '{name}' is not numeric")


def validate_csv(path: str, kind: str) -> pd.DataFrame:
    """Re-parse an emitted CSV and check it against its schema."""
    df = pd.read_csv(path)
    validate_frame(df, kind)
    return df


def write_report(df: pd.DataFrame, kind: str, path: Optional[str], fmt: str,
                 table: Optional[str] = None) -> str:
    """
    Render df as CSV or as an aligned text table. With a path the output is
    written there (CSVs are re-validated after writing); the rendered text is
    returned either way.
    """
    validate_frame(df, kind)
    if fmt == "csv":
        text = df.to_csv(index=False, lineterminator="\n")
    else:
        text = (table if table is not None else df.to_string(index=False)) + "\n"
    if path:
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        if fmt == "csv":
            validate_csv(path, kind)
        logger.info(f"Wrote {kind} report to {path}")
    return text
