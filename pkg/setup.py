from setuptools import find_packages, setup

setup(
    name='lanefidelity',
    packages=find_packages("src", exclude=["*.tests", "tests"]),
    package_dir={'': 'src'},
    package_data={'lanefidelity.data': ['presets/*.json']},
    version='0.1.0',
    description='Localization fidelity of lane priors: overlap, calibration, gated refinement and evaluation',
    author='Biomath',
    license='MIT',
    install_requires=[
        'matplotlib',
        'numpy',
        'scipy',
        'numba',
        'pandas',
        'xarray'
    ],
    extras_require={
        "develop":  ["pytest",
                     "sphinx",
                     "numpydoc",
                     "sphinx_rtd_theme",
                     "myst_parser[sphinx]"],
    },
    entry_points={
        "console_scripts": ["lanefidelity=lanefidelity.cli:main"],
    }
)
