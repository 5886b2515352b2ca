"""Level-set shape optimization with differentiable hole and phase nucleation.

2D: raster targets are traced into vector documents by evolving a level set
under per-pixel misfit speeds that act on the whole plane, so topology adapts
freely. 3D: closed surfaces are reconstructed from calibrated views with
shading, silhouette, and conic-carve sensitivities.
"""

__version__ = "0.1.0"

from .grid import LevelSetGrid, reinitialize  # noqa: F401
from .mollify import Mollifier, smoothed_delta, smoothed_heaviside  # noqa: F401
from .contours import ContourSet, count_topology, extract_contours  # noqa: F401
from .mesh import TriMesh, extract_mesh, genus  # noqa: F401
from .images import ImageBuffer, read_png, write_png  # noqa: F401
from .scene2d import SceneModel2D, composite, fit_colors, functional_value, residuals  # noqa: F401
from .evolve2d import EvolutionConfig, optimize2d, step, unified_speed  # noqa: F401
from .render3d import Camera, SceneModel3D, make_target, render  # noqa: F401
from .evolve3d import Evolve3DConfig, optimize3d, secondary_td, splat_and_extend  # noqa: F401
from .vectorize import VectorDocument, build_document, simplify, write_svg  # noqa: F401
