import os

import pytest

import bdlab
import bdlab.model
from bdlab.misc import bdlab_base_dir, get_git_revision_short_hash, module_file


def test_base_dir_contains_package():
    base = bdlab_base_dir()
    assert os.path.isabs(str(base))
    assert os.path.isfile(os.path.join(str(base), "bdlab", "__init__.py"))


def test_module_file():
    assert os.path.isfile(module_file(bdlab, "config-default.yaml"))
    assert module_file(bdlab.model, "decoder.yaml").endswith("decoder.yaml")
    with pytest.raises(FileNotFoundError):
        module_file(bdlab.model, "nothing.yaml")


def test_git_revision_is_a_string():
    get_git_revision_short_hash.cache_clear()
    assert isinstance(get_git_revision_short_hash(), str)
