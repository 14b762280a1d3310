from __future__ import annotations

import getpass
import platform
import uuid
from typing import Any, Callable, Dict, List, Optional

from bdlab import Config, Dataset
from bdlab.misc import get_git_revision_short_hash


def _trace_job_creation(job: Job):
    "Records where and with which code a job was created."
    import torch

    try:
        username = getpass.getuser()
    except (KeyError, OSError):
        username = None
    job.trace_entry = job.trace(
        event="job_created",
        git_head=get_git_revision_short_hash(),
        torch_version=str(torch.__version__),
        username=username,
        hostname=platform.node(),
        folder=job.config.folder,
    )


class Job:
    """Base class of pretraining, fine-tuning, sweep and evaluation jobs.

    Every job has a random id. Its log lines carry the first 8 characters of that
    id, and its trace records carry the full id and the id of the parent job.
    Subclasses run `job_created_hooks` at the end of their constructor.

    """

    #: run once a job is fully constructed; signature: job
    job_created_hooks: List[Callable[[Job], Any]] = [_trace_job_creation]

    def __init__(
        self, config: Config, dataset: Optional[Dataset], parent_job: Job = None
    ):
        self.config = config
        self.dataset = dataset
        self.parent_job = parent_job
        self.job_id = str(uuid.uuid4())
        self.trace_entry: Dict[str, Any] = {}
        self.config.log_prefix = "[{}] ".format(self.job_id[:8])

    @staticmethod
    def create(config: Config, dataset: Optional[Dataset] = None, parent_job=None):
        "The job for option ``job.type``."
        from bdlab.job import PretrainingJob, SweepJob

        if config.check("job.type", ["pretrain", "finetune"]) == "pretrain":
            return PretrainingJob(config, parent_job=parent_job)
        return SweepJob(config, dataset, parent_job=parent_job)

    def run(self):
        raise NotImplementedError

    def trace(self, **kwargs) -> Dict[str, Any]:
        "Like :meth:`Config.trace`, with the ids of this job and its parent added."
        if self.parent_job is not None:
            kwargs["parent_job_id"] = self.parent_job.job_id
        return self.config.trace(
            job_id=self.job_id, job=self.config.get("job.type"), **kwargs
        )
