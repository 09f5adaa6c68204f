import os

import pytest

from grids import MAPS_DIR, open_grid, solved
from mapf_core import load_map


@pytest.fixture
def lab_grid():
    return load_map(os.path.join(MAPS_DIR, 'lab.map'))


@pytest.fixture
def corridor_pair():
    """
    Two agents on a 1x4 corridor B C D F.

    Agent 0 (the leader) moves D -> F; agent 1 (the follower) moves B -> C -> D
    and may only enter D once the leader has left it.
    """
    return solved(open_grid(4, 1), [[(2, 0), (3, 0)], [(0, 0), (1, 0), (2, 0)]])


@pytest.fixture
def line10():
    """One agent walking ten cells along a 1x11 corridor."""
    return solved(open_grid(11, 1), [[(x, 0) for x in range(11)]])
