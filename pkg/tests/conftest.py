import pytest

from bdlab import Config, Dataset
from bdlab.model import LabModel
from bdlab.util.synthetic import inventory
from bdlab.util.tokenizer import ChunkTokenizer


def toy_options(**more):
    """Small model and data settings for fast tests."""
    options = {
        "verbose": False,
        "decoder.d_model": 16,
        "decoder.heads": 2,
        "decoder.n_layers": 6,
        "decoder.d_ff": 32,
        "decoder.dropout": 0.0,
        "dataset.max_len": 64,
        "dataset.synthetic.num_sentences": 100,
        "dataset.synthetic.min_words": 3,
        "dataset.synthetic.max_words": 6,
        "train.max_epochs": 1,
        "train.batch_size": 4,
        "train.grad_accum": 2,
        "finetune.seeds": [1, 2],
        "eval.batch_size": 16,
    }
    options.update(more)
    return options


@pytest.fixture
def make_config(tmp_path):
    def make(**more):
        config = Config(folder=str(tmp_path))
        for key, value in toy_options(**more).items():
            config.set(key, value)
        return config

    return make


@pytest.fixture
def config(make_config):
    return make_config()


@pytest.fixture
def tokenizer(config):
    return ChunkTokenizer.build(inventory(), config.get("dataset.chunk"))


@pytest.fixture
def model(config, tokenizer):
    return LabModel.create(config, len(tokenizer), 3, seed=0)


@pytest.fixture
def dataset(config):
    return Dataset.create(config)
