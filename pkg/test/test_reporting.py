import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import pandas as pd
import pytest

from src.errors import SchemaError
from src.profiler import SimilarityProfile
from src.reporting import validate_csv, validate_frame, write_report


def profile_frame():
    return SimilarityProfile(values=(0.1234567, 0.9), n_samples=(4, 4), n_prompts=1, n_tokens=4).to_frame()


def test_profile_csv_is_written_and_revalidated(tmp_path):
    path = tmp_path / "out" / "profile.csv"
    write_report(profile_frame(), "profile", str(path), "csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "layer,cosine_sim,n_samples"
    assert lines[1] == "1,0.123457,4"
    assert validate_csv(str(path), "profile")["layer"].tolist() == [1, 2]


def test_table_format_returns_text_without_path():
    text = write_report(profile_frame(), "profile", None, "table", table="custom table")
    assert text == "custom table\n"


def test_wrong_columns_are_rejected():
    frame = profile_frame().rename(columns={"cosine_sim": "similarity"})
    with pytest.raises(SchemaError):
        validate_frame(frame, "profile")
    with pytest.raises(SchemaError):
        validate_frame(profile_frame().assign(extra=1.0), "profile")


def test_wrong_types_are_rejected(tmp_path):
    path = tmp_path / "bench.csv"
    path.write_text("label,mode,k,keep_last,mean_s,std_s,improvement_pct\n100%,block,zero,False,0.1,0.0,0.0\n")
    with pytest.raises(SchemaError):
        validate_csv(str(path), "bench")


def test_eval_schema_accepts_task_columns():
    frame = pd.DataFrame({"label": ["100%"], "mode": ["block"], "k": [0], "keep_last": [False],
                          "arc": [50.0], "average": [50.0]})
    validate_frame(frame, "eval")
    with pytest.raises(SchemaError):
        validate_frame(frame.assign(note=["x"]), "eval")
