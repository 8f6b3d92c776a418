import json
import math

import numpy as np
import pytest

from groupsparse.grouping import (
    GroupPartition,
    SparsityMask,
    group_regularizer,
    load_group_manifest,
    prune_group,
    regularizer_subgradient,
    save_group_manifest,
    total_regularizer,
)
from groupsparse.nn import forward, init_network, masked_forward


def small_net(seed=0, dims=(6, 3, 2), partition=None):
    return init_network(list(dims), seed=seed, partition=partition)


class TestGroupPartition:
    def test_contiguous(self):
        part = GroupPartition.contiguous([3, 3])
        assert part.k == 2 and part.p == 6
        assert list(part.groups[0]) == [0, 1, 2]
        assert list(part.groups[1]) == [3, 4, 5]

    def test_rejects_overlap(self):
        with pytest.raises(ValueError, match="partition"):
            GroupPartition([[0, 1], [1, 2]])

    def test_rejects_gap(self):
        with pytest.raises(ValueError, match="partition"):
            GroupPartition([[0, 1], [3]])

    def test_rejects_empty_group(self):
        with pytest.raises(ValueError, match="non-empty"):
            GroupPartition([[0, 1], []])

    def test_singletons(self):
        part = GroupPartition.singletons(4)
        assert part.k == 4 and part.sizes == (1, 1, 1, 1)

    def test_non_contiguous_columns_allowed(self):
        part = GroupPartition([[0, 2], [1, 3]])
        assert part.p == 4
        assert list(part.columns(1)) == [1, 3]

    def test_equality(self):
        assert GroupPartition.contiguous([2, 2]) == GroupPartition.contiguous([2, 2])
        assert GroupPartition.contiguous([2, 2]) != GroupPartition.contiguous([1, 3])

    def test_index_out_of_range(self):
        part = GroupPartition.contiguous([2, 2])
        with pytest.raises(IndexError):
            part.columns(2)


class TestRegularizer:
    def test_zero_block_is_zero(self):
        part = GroupPartition.contiguous([3, 3])
        net = small_net(partition=part)
        net.layers[0].weights[:3] = 0.0
        assert group_regularizer(net, part, 0) == 0.0

    def test_ones_block_closed_form(self):
        # p_i = 2, 2x2 block of ones: sqrt(2) * sqrt(4) = 2*sqrt(2)
        part = GroupPartition.contiguous([2, 2])
        net = init_network([4, 2], seed=0)
        net.layers[0].weights[:] = 1.0
        assert group_regularizer(net, part, 0) == pytest.approx(2 * math.sqrt(2), abs=1e-12)

    def test_single_weight_reduces_to_abs(self):
        part = GroupPartition.singletons(1)
        net = init_network([1, 1], seed=0)
        net.layers[0].weights[:] = -3.5
        assert group_regularizer(net, part, 0) == pytest.approx(3.5)

    def test_total_is_sum_of_groups(self):
        part = GroupPartition.contiguous([2, 3, 1])
        net = small_net(partition=part)
        total = total_regularizer(net, part)
        assert total == pytest.approx(sum(group_regularizer(net, part, i) for i in range(3)))

    def test_single_group_covers_all(self):
        part = GroupPartition.contiguous([6])
        net = small_net()
        expected = math.sqrt(6) * np.linalg.norm(net.layers[0].weights)
        assert total_regularizer(net, part) == pytest.approx(expected)

    def test_absolutely_homogeneous(self):
        part = GroupPartition.contiguous([2, 4])
        net = small_net(partition=part)
        base = total_regularizer(net, part)
        for c in (0.0, 0.5, 3.0):
            scaled = small_net(partition=GroupPartition.contiguous([2, 4]))
            scaled.layers[0].weights = c * net.layers[0].weights.copy()
            assert total_regularizer(scaled, GroupPartition.contiguous([2, 4])) == pytest.approx(
                c * base, abs=1e-12
            )

    def test_group_lasso_reduction_zero_hidden_q1(self):
        # no hidden layer, single output: penalty equals sum sqrt(p_i)*||beta_i||_2
        rng = np.random.default_rng(5)
        part = GroupPartition.contiguous([3, 2, 4])
        net = init_network([9, 1], seed=1)
        net.layers[0].weights = rng.normal(size=(9, 1))
        beta = net.layers[0].weights.ravel()
        expected = sum(
            math.sqrt(part.sizes[i]) * np.linalg.norm(beta[part.groups[i]])
            for i in range(part.k)
        )
        assert total_regularizer(net, part) == pytest.approx(expected, rel=1e-12)

    def test_lasso_reduction_singletons_q1(self):
        rng = np.random.default_rng(6)
        part = GroupPartition.singletons(7)
        net = init_network([7, 1], seed=1)
        net.layers[0].weights = rng.normal(size=(7, 1))
        assert total_regularizer(net, part) == pytest.approx(
            np.abs(net.layers[0].weights).sum(), rel=1e-12
        )


class TestSubgradient:
    def test_zero_block_gives_zero(self):
        part = GroupPartition.contiguous([3, 3])
        net = small_net(partition=part)
        net.layers[0].weights[:3] = 0.0
        assert np.all(regularizer_subgradient(net, part, 0) == 0.0)

    def test_scalar_case(self):
        part = GroupPartition.singletons(1)
        net = init_network([1, 1], seed=0)
        net.layers[0].weights[:] = 3.0
        assert regularizer_subgradient(net, part, 0) == pytest.approx(np.array([[1.0]]))

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        part = GroupPartition.contiguous([2, 4])
        net = small_net(partition=part)
        for i in range(part.k):
            sub = regularizer_subgradient(net, part, i)
            rows = part.columns(i)
            h = 1e-6
            for a in range(len(rows)):
                for b in range(net.layers[0].weights.shape[1]):
                    w0 = net.layers[0].weights[rows[a], b]
                    net.layers[0].weights[rows[a], b] = w0 + h
                    up = group_regularizer(net, part, i)
                    net.layers[0].weights[rows[a], b] = w0 - h
                    dn = group_regularizer(net, part, i)
                    net.layers[0].weights[rows[a], b] = w0
                    fd = (up - dn) / (2 * h)
                    assert sub[a, b] == pytest.approx(fd, rel=1e-5)

    def test_sparse_group_raises(self):
        part = GroupPartition.contiguous([3, 3])
        net = small_net(partition=part)
        prune_group(net, net.sparse, 1)
        with pytest.raises(RuntimeError, match="pruned"):
            regularizer_subgradient(net, part, 1)


class TestMaskedForward:
    def test_equals_clone_with_zeroed_rows(self):
        rng = np.random.default_rng(11)
        part = GroupPartition.contiguous([2, 2, 2])
        net = small_net(seed=4, partition=part)
        batch = rng.normal(size=(5, 6))
        for i in range(part.k):
            clone = small_net(seed=4, partition=GroupPartition.contiguous([2, 2, 2]))
            clone.layers[0].weights[part.columns(i), :] = 0.0
            expected = forward(clone, batch).outputs
            got = masked_forward(net, part, i, batch)
            np.testing.assert_array_equal(got, expected)

    def test_noop_when_rows_already_zero(self):
        part = GroupPartition.contiguous([2, 4])
        net = small_net(seed=2, partition=part)
        net.layers[0].weights[:2] = 0.0
        batch = np.random.default_rng(0).normal(size=(4, 6))
        np.testing.assert_array_equal(
            masked_forward(net, part, 0, batch), forward(net, batch).outputs
        )

    def test_zero_batch(self):
        part = GroupPartition.contiguous([3, 3])
        net = small_net(seed=9, partition=part)
        batch = np.zeros((3, 6))
        np.testing.assert_array_equal(
            masked_forward(net, part, 1, batch), forward(net, batch).outputs
        )


class TestPruneGroup:
    def test_prune_zeroes_and_flags(self):
        part = GroupPartition.contiguous([3, 3])
        net = small_net(partition=part)
        prune_group(net, net.sparse, 0)
        assert group_regularizer(net, part, 0) == 0.0
        assert net.sparse.flags[0] and not net.sparse.flags[1]
        assert np.all(net.layers[0].weights[:3] == 0.0)

    def test_masked_forward_after_prune_equals_forward(self):
        part = GroupPartition.contiguous([2, 4])
        net = small_net(seed=3, partition=part)
        prune_group(net, net.sparse, 0)
        batch = np.random.default_rng(1).normal(size=(4, 6))
        np.testing.assert_array_equal(
            masked_forward(net, part, 0, batch), forward(net, batch).outputs
        )

    def test_double_prune_raises(self):
        part = GroupPartition.contiguous([3, 3])
        net = small_net(partition=part)
        prune_group(net, net.sparse, 1)
        with pytest.raises(RuntimeError, match="already"):
            prune_group(net, net.sparse, 1)

    def test_prune_all_makes_output_constant(self):
        part = GroupPartition.contiguous([2, 2, 2])
        net = small_net(seed=8, partition=part)
        for i in range(part.k):
            prune_group(net, net.sparse, i)
        rng = np.random.default_rng(2)
        out1 = forward(net, rng.normal(size=(4, 6))).outputs
        out2 = forward(net, rng.normal(size=(4, 6))).outputs
        np.testing.assert_allclose(out1, out2, atol=1e-15)


class TestManifest:
    def test_round_trip(self, tmp_path):
        part = GroupPartition([[0, 2], [1, 3, 4]], names=["even", "rest"])
        path = tmp_path / "groups.json"
        save_group_manifest(part, path)
        loaded = load_group_manifest(path)
        assert loaded == part
        assert loaded.names == ("even", "rest")

    def test_rejects_non_partition(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"groups": [{"name": "a", "columns": [0, 1]}, {"name": "b", "columns": [3]}]}))
        with pytest.raises(ValueError, match="partition"):
            load_group_manifest(path)

    def test_rejects_missing_groups_key(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{}")
        with pytest.raises(ValueError, match="groups"):
            load_group_manifest(path)


class TestSparsityMask:
    def test_live_and_sparse_lists(self):
        part = GroupPartition.contiguous([2, 2, 2])
        mask = SparsityMask(part)
        assert mask.live_groups() == [0, 1, 2]
        mask.flags[1] = True
        assert mask.live_groups() == [0, 2]
        assert mask.sparse_groups() == [1]
        assert mask.sparse_count() == 1
        assert list(mask.sparse_rows()) == [2, 3]
