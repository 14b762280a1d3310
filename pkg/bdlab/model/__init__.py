from bdlab.model.lab_model import LabModel

# models
from bdlab.model.decoder import SLModel
