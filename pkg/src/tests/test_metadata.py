import numpy as np

from lanefidelity import __version__
from lanefidelity.data.metadata import list_module_versions, package_versions, report_metadata


def test_list_module_versions():
    versions = list_module_versions({"np": np, "x": 3}, return_dict=True)
    assert versions == {"numpy": np.__version__}
    assert list_module_versions({"np": np}) is None


def test_report_metadata():
    meta = report_metadata("synth")
    assert meta["command"] == "synth"
    assert meta["lanefidelity"] == __version__
    assert meta["packages"]["numpy"] == np.__version__
    assert package_versions(("numpy", "no_such_package_xyz")) == {"numpy": np.__version__,
                                                                   "no_such_package_xyz": None}
