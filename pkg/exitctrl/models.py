"""Run registry tables using SQLModel"""
from datetime import datetime
from typing import List, Optional

from sqlmodel import Field, Relationship, SQLModel


class RunRecord(SQLModel, table=True):
    """One CLI run, indexed by the manifest it wrote"""
    id: Optional[int] = Field(default=None, primary_key=True)
    manifest_path: str = Field(max_length=1000, unique=True, index=True)
    run_dir: str = Field(max_length=1000)
    command: str = Field(max_length=20)
    digest: str = Field(max_length=64, index=True)
    master_seed: str = Field(max_length=20)  # u64 does not fit a signed SQL integer
    version: str = Field(max_length=20)
    duplicate_of: Optional[int] = Field(default=None, foreign_key="runrecord.id")
    ingested_at: datetime = Field(default_factory=datetime.utcnow)

    # Relationships
    checks: List["CheckRecord"] = Relationship(back_populates="run")


class CheckRecord(SQLModel, table=True):
    """CheckReport row of a verify/xval run"""
    id: Optional[int] = Field(default=None, primary_key=True)
    run_id: int = Field(foreign_key="runrecord.id")
    position: int = Field(ge=0)  # order within the run's report
    name: str = Field(max_length=100)
    status: str = Field(max_length=10)  # "pass", "fail" or "skipped"
    measured: Optional[float] = Field(default=None)
    tolerance: Optional[float] = Field(default=None)
    margin: Optional[float] = Field(default=None)

    # Relationships
    run: "RunRecord" = Relationship(back_populates="checks")
