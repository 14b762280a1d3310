from bdlab.util.optimizer import LabOptimizer
from bdlab.util.io import load_checkpoint, save_checkpoint
