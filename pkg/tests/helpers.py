from data.roads import RoadSegment


def make_segment(length=200.0, k=0.0, w=3.5, seg_id=0):
    """Segment with constant curvature and width."""
    return RoadSegment(
        id=seg_id,
        length=length,
        curvature_knots=((0.0, k), (length, k)),
        width_knots=((0.0, w), (length, w)),
    )
