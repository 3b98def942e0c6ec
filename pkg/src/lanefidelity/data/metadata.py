# -*- coding: utf-8 -*-
"""
Metadata attached to every report: when it was made and with which
package versions. Reports keep it under a separate ``metadata`` key so the
rest of the report stays byte-reproducible.
"""

import datetime
import importlib
import logging
import platform
import types

logger = logging.getLogger(__name__)

REPORT_PACKAGES = ("numpy", "scipy", "numba", "pandas", "xarray", "matplotlib")


def list_module_versions(glob, return_dict=False):
    """
    Versions of all modules found in a namespace.

    Parameters
    ----------
    glob : dict
        output of the globals() function call.
    return_dict : bool, optional
        Return the versions instead of only logging them. The default is False.

    Returns
    -------
    versions_dict : dict, optional
        Module names as keys and version strings as values.
    """
    versions_dict = {}
    for val in glob.values():
        if isinstance(val, types.ModuleType) and "__version__" in val.__dict__:
            logger.debug("%s %s", val.__name__, val.__version__)
            versions_dict[val.__name__] = str(val.__version__)
    if return_dict is True:
        return versions_dict


def package_versions(packages=REPORT_PACKAGES):
    """Installed version of each package, ``None`` when it cannot be imported."""
    modules = {}
    for name in packages:
        try:
            modules[name] = importlib.import_module(name)
        except ImportError:
            modules[name] = None
    versions = list_module_versions({k: v for k, v in modules.items() if v is not None}, return_dict=True)
    return {name: versions.get(name) for name in packages}


def report_metadata(command=None):
    """Timestamp, interpreter and package versions of a report."""
    from .. import __version__
    return {
        "command": command,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
        "python": platform.python_version(),
        "lanefidelity": __version__,
        "packages": package_versions(),
    }
