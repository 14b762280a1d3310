from bdlab.job.trace import Trace
from bdlab.job.job import Job
from bdlab.job.eval import EvaluationJob
from bdlab.job.train import FinetuneJob, PretrainingJob, RunManifest, TrainingJob
from bdlab.job.sweep import SweepJob
