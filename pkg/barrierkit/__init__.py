""" barrierkit explicit public exports. This is not the extent of the public
API, merely a convenience for accessing the most commonly used parts.

Importing the package registers the built-in ``acc`` and ``linear`` systems.
"""

from .acc import AccParameters, acc_pipeline, acc_slice, acc_system
from .assemble import AdmissibleSetSlice, Membership, build_slice, contains, slice_area
from .barrier import BarrierTrajectory, trace_barrier, trace_barrier_reparam
from .config import BarrierSettings, IntegratorSettings, RunConfig
from .exceptions import BarrierKitException, ConfigError
from .saddle import saddle_hamiltonian, saddle_lie
from .sysmodel import Box, ControlSystem, get_system, load_system, register_system
from .tangency import TangencyPoint, filter_candidates, find_tangency_points
