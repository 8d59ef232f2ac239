"""Run-time machinery: the job time ledger, the run context and pattern instances."""

from .context import RunContext
from .job import BUCKETS, Activity, Job

__all__ = ["RunContext", "Job", "Activity", "BUCKETS"]
