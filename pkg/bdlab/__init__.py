from bdlab.config import Config, Configurable
from bdlab.dataset import Dataset
