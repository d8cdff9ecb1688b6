"""Integration safety case bounds for perception components.

Modules: ``case`` (case-spec model), ``dsl`` (frame predicates),
``frames`` (datasets and matching), ``metrics``, ``stats``,
``propagation``, ``sca`` (braking kinematics), ``sim`` (drive oracle),
``report`` and ``cli``.
"""

from importlib import resources

__version__ = "0.1.0"


def example_case_path():
    """Path of the bundled stopped-car-ahead case spec."""
    return resources.files(__name__) / "data" / "sca_case.json"
