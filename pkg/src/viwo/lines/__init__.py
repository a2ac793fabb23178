"""Line features: 2D processing, triangulation, measurement model and update."""

from .measurement import (LineJacobians, line_jacobians, line_measurement, orthonormal_basis, orthonormal_plus,
                          plucker_tangent)
from .segments import (AxisClass, LineSegment2D, VanishingPoints, assign_points, classify_line,
                       compute_vanishing_points, line_errors, match_lines, point_line_distance,
                       point_segment_distance)
from .triangulation import (METHOD_PLANES, METHOD_POINT_DIRECTION, METHOD_TWO_POINTS, CascadeResult, LineConfig,
                            intersect_planes, observation_plane, refine_line, triangulate_line,
                            triangulate_line_detailed, triangulate_line_planes, triangulate_line_point_direction,
                            triangulate_line_two_points)
from .update import LineRecord, LineStatus, LineTrack, LineUpdateResult, line_system, line_update

__all__ = [
    "AxisClass", "CascadeResult", "LineConfig", "LineJacobians", "LineRecord", "LineSegment2D", "LineStatus",
    "LineTrack", "LineUpdateResult", "METHOD_PLANES", "METHOD_POINT_DIRECTION", "METHOD_TWO_POINTS",
    "VanishingPoints", "assign_points", "classify_line", "compute_vanishing_points", "intersect_planes",
    "line_errors", "line_jacobians", "line_measurement", "line_system", "line_update", "match_lines",
    "observation_plane", "orthonormal_basis", "orthonormal_plus", "plucker_tangent", "point_line_distance",
    "point_segment_distance", "refine_line", "triangulate_line", "triangulate_line_detailed",
    "triangulate_line_planes", "triangulate_line_point_direction", "triangulate_line_two_points",
]
