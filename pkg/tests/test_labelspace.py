import numpy as np
import pytest

from lsembed.labelspace import (
    AttributeTable,
    Hierarchy,
    MarginSchedule,
    jaccard_margin,
    shared_depth,
    triplet_margins,
)
from lsembed.utils.errors import InputError, ValidationError


@pytest.fixture
def tree():
    # two coarse nodes; class 2 sits alone under coarse node 1
    return Hierarchy(np.array([[0, 0], [0, 1], [1, 2]]))


class TestHierarchy:
    def test_shared_depth(self, tree):
        assert shared_depth(tree, 0, 0) == 2
        assert shared_depth(tree, 0, 1) == 1
        assert shared_depth(tree, 0, 2) == 0
        assert tree.shared_depth(1, 2) == 0

    def test_shared_depth_is_symmetric_and_matches_matrix(self, tree):
        depth = tree.depth_matrix()
        for a in range(3):
            for b in range(3):
                assert depth[a, b] == tree.shared_depth(a, b) == tree.shared_depth(b, a)

    def test_three_levels(self):
        tree = Hierarchy(np.array([[0, 1, 5], [0, 1, 7], [2, 3, 8]]))
        assert tree.shared_depth(0, 1) == 2
        assert tree.shared_depth(0, 2) == 0
        assert tree.shared_depth(2, 2) == 3

    def test_top_level_mismatch_cannot_share_fine_id(self):
        # [0, 1, 5] and [2, 1, 5] repeat fine id 5 and hang node 1 under two parents
        with pytest.raises(ValidationError):
            Hierarchy(np.array([[0, 1, 5], [2, 1, 5]]))

    def test_flat(self):
        flat = Hierarchy.flat(4)
        assert flat.num_levels == 1
        assert flat.shared_depth(1, 1) == 1
        assert flat.shared_depth(1, 3) == 0

    def test_unknown_class(self, tree):
        with pytest.raises(InputError):
            tree.shared_depth(0, 3)
        with pytest.raises(InputError):
            tree.path(-1)

    def test_tree_property_violation(self):
        # middle node 0 hangs under both coarse nodes
        with pytest.raises(ValidationError):
            Hierarchy(np.array([[0, 0, 0], [1, 0, 1]]))

    def test_duplicate_fine_ids(self):
        with pytest.raises(ValidationError):
            Hierarchy(np.array([[0, 1], [1, 1]]))

    def test_negative_entries(self):
        with pytest.raises(ValidationError):
            Hierarchy(np.array([[0, -1]]))

    def test_level_labels(self, tree):
        assert tree.level_labels(1).tolist() == [0, 0, 1]
        with pytest.raises(InputError):
            tree.level_labels(3)

    def test_paths_are_read_only(self, tree):
        with pytest.raises(ValueError):
            tree.paths[0, 0] = 5


class TestAttributeTable:
    def test_jaccard_margin(self):
        table = AttributeTable(3, ({0, 1}, {1, 2}, {2}))
        assert table.jaccard(0, 1) == pytest.approx(1 / 3)
        assert jaccard_margin(table, 0, 1, 0.2) == pytest.approx(0.2 * (2 / 3))
        assert table.jaccard_margin(0, 2, 0.2) == 0.2
        assert table.jaccard_margin(1, 1, 0.2) == 0.0

    def test_disjoint_single_attributes_give_base_margin(self):
        table = AttributeTable(4, ({0}, {1}, {2}, {3}))
        for a in range(4):
            for b in range(4):
                if a != b:
                    assert table.jaccard_margin(a, b, 0.2) == 0.2

    def test_shares_attribute(self):
        table = AttributeTable(3, ({0, 1}, {1, 2}, {2}))
        assert table.shares_attribute(0, 1)
        assert not table.shares_attribute(0, 2)
        assert table.as_matrix().tolist() == [
            [True, True, False],
            [False, True, True],
            [False, False, True],
        ]

    def test_invalid_tables(self):
        with pytest.raises(ValidationError):
            AttributeTable(2, ({0}, set()))
        with pytest.raises(ValidationError):
            AttributeTable(2, ({0, 2},))
        with pytest.raises(ValidationError):
            AttributeTable(2, ({0},)).jaccard_margin(0, 0, 0.0)


class TestMarginSchedule:
    def test_linear(self):
        assert MarginSchedule.linear(1, 0.2).margins == (0.2,)
        two = MarginSchedule.linear(2, 0.2)
        assert two.margins == pytest.approx((0.2, 0.1))
        assert MarginSchedule.linear(3, 0.3).margins == pytest.approx((0.3, 0.2, 0.1))

    def test_triplet_margins_telescope(self):
        schedule = MarginSchedule((0.5, 0.3, 0.1))
        margins = triplet_margins(schedule)
        assert margins == pytest.approx((0.2, 0.2, 0.1))
        assert sum(margins) == pytest.approx(0.5)
        assert schedule.triplet_margins() == margins

    @pytest.mark.parametrize("margins", [(0.2, 0.2), (0.1, 0.2), (0.2, 0.0), ()])
    def test_invalid_schedules(self, margins):
        with pytest.raises(ValidationError):
            MarginSchedule(margins)
