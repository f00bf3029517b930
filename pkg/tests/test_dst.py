import numpy as np
import pytest

from supt.dst import (ExploreConfig, GranetSchedule, exploration_rate,
                      explore, granet_shrink, granet_target_sparsity,
                      grow_step, prune_step)
from supt.network import Network
from supt.sparse import MaskedParameter, random_mask_init, sparsity_of
from supt.tensor import OptimizerState


def masked(values, mask):
    values = np.asarray(values, dtype=float)
    return MaskedParameter(values.copy(), np.asarray(mask, dtype=bool),
                           np.zeros(values.shape[1]))


class TestPruneStep:
    def test_drops_smallest_magnitude(self):
        p = masked([[0.1, -0.5, 0.3]], [[1, 1, 1]])
        _, n = prune_step(p, 1.0 / 3.0)
        assert n == 1
        assert p.mask.tolist() == [[False, True, True]]
        assert p.values[0, 0] == 0.0

    def test_floor_makes_noop(self):
        p = masked([[0.1, -0.5, 0.3]], [[1, 1, 1]])
        before = p.mask.copy()
        _, n = prune_step(p, 0.2)  # floor(0.6) = 0
        assert n == 0
        assert np.array_equal(p.mask, before)

    def test_needs_an_active_weight(self):
        p = masked([[0.0, 0.0]], [[0, 0]])
        with pytest.raises(ValueError):
            prune_step(p, 0.5)

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(0)
        values = rng.standard_normal((12, 9))
        mask = random_mask_init((12, 9), 0.7, seed=1)
        values[~mask] = 0.0
        p = masked(values, mask)
        active = np.flatnonzero(mask.ravel())
        k = int(np.floor(0.3 * active.size))
        drop = active[np.argsort(np.abs(values.ravel()[active]),
                                 kind="stable")][:k]
        # Stable ascending sort ties to the lowest index, matching the
        # engine's keep-side rule only when magnitudes are distinct (they
        # are, almost surely, for continuous draws).
        prune_step(p, 0.3)
        want = mask.ravel().copy()
        want[drop] = False
        assert np.array_equal(p.mask.ravel(), want)


class TestGrowStep:
    def test_zero_count_unchanged(self):
        p = masked([[1.0, 0.0]], [[1, 0]])
        before = p.mask.copy()
        grow_step(p, None, 0, "random", seed=0)
        assert np.array_equal(p.mask, before)

    def test_gradient_criterion_hand_case(self):
        p = masked([[1.0, 0.0, 0.0, 0.0]], [[1, 0, 0, 0]])
        grads = np.array([[9.0, 0.2, -3.0, 0.1]])
        grow_step(p, grads, 1, "gradient", seed=0)
        assert p.mask.tolist() == [[True, False, True, False]]
        assert p.values[0, 2] == 0.0  # grown weights start at zero

    def test_random_reproducible_and_disjoint(self):
        rng = np.random.default_rng(2)
        values = rng.standard_normal((8, 8))
        mask = random_mask_init((8, 8), 0.4, seed=3)
        values[~mask] = 0.0
        a = masked(values, mask)
        b = masked(values, mask)
        grow_step(a, None, 10, "random", seed=77)
        grow_step(b, None, 10, "random", seed=77)
        assert np.array_equal(a.mask, b.mask)
        grown = a.mask & ~mask
        assert int(grown.sum()) == 10
        assert not (grown & mask).any()

    def test_capacity_error(self):
        p = masked([[1.0, 0.0]], [[1, 0]])
        with pytest.raises(ValueError):
            grow_step(p, None, 2, "random", seed=0)


class TestExplorationRate:
    def test_no_anneal(self):
        cfg = ExploreConfig(p=0.3, anneal="none")
        assert exploration_rate(12345, cfg) == 0.3

    def test_cosine_endpoints(self):
        cfg = ExploreConfig(p=0.3, anneal="cosine", anneal_t_end=1000)
        assert np.isclose(exploration_rate(0, cfg), 0.3)
        assert np.isclose(exploration_rate(1000, cfg), 0.0, atol=1e-15)
        assert np.isclose(exploration_rate(2000, cfg), 0.0, atol=1e-15)

    def test_cosine_midpoint(self):
        cfg = ExploreConfig(p=0.3, anneal="cosine", anneal_t_end=1000)
        assert np.isclose(exploration_rate(500, cfg), 0.15)


class TestGranetSchedule:
    def test_plateaus(self):
        sched = GranetSchedule(0.5, 0.9, t_start=100, t_end=500)
        assert granet_target_sparsity(0, sched) == 0.5
        assert granet_target_sparsity(100, sched) == 0.5
        assert granet_target_sparsity(500, sched) == 0.9
        assert granet_target_sparsity(10_000, sched) == 0.9

    def test_cubic_midpoint(self):
        sched = GranetSchedule(0.5, 0.9, t_start=0, t_end=100)
        assert np.isclose(granet_target_sparsity(50, sched),
                          0.9 - 0.4 * 0.5 ** 3)

    def test_monotone_nondecreasing(self):
        sched = GranetSchedule(0.5, 0.95, t_start=10, t_end=300)
        values = [granet_target_sparsity(i, sched) for i in range(0, 400, 7)]
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))

    def test_shrink_tracks_target(self):
        rng = np.random.default_rng(4)
        net = Network((20, 30, 5), batchnorm=False, rng=rng)
        for layer in net.layers:
            layer.param.mask[:] = random_mask_init(
                layer.param.values.shape, 0.5, seed=5)
            layer.param.apply_mask()
        total = sum(m.size for m in net.masks())
        sched = GranetSchedule(0.5, 0.9, t_start=0, t_end=100)
        last = sparsity_of(net.masks())
        for i in range(0, 120, 10):
            target = granet_target_sparsity(i, sched)
            granet_shrink(net, target)
            got = sparsity_of(net.masks())
            assert abs(got - target) <= len(net.layers) / total
            assert got >= last - 1e-12
            last = got


class TestExplore:
    def _net(self, seed=0, density=0.3):
        rng = np.random.default_rng(seed)
        net = Network((10, 16, 4), batchnorm=False, rng=rng)
        for i, layer in enumerate(net.layers):
            layer.param.mask[:] = random_mask_init(
                layer.param.values.shape, density, seed=seed + i)
            layer.param.apply_mask()
        return net

    def test_conserves_active_counts_exactly(self):
        net = self._net()
        counts = [layer.param.active for layer in net.layers]
        s_before = sparsity_of(net.masks())
        cfg = ExploreConfig(p=0.3, grow_criterion="random")
        explore(net, None, cfg, iteration=1, seed=11)
        assert [l.param.active for l in net.layers] == counts
        assert sparsity_of(net.masks()) == s_before

    def test_hundred_rounds_random_growth(self):
        net = self._net(seed=1)
        counts = [layer.param.active for layer in net.layers]
        cfg = ExploreConfig(p=0.3, grow_criterion="random")
        for it in range(100):
            explore(net, None, cfg, iteration=it, seed=it)
            assert [l.param.active for l in net.layers] == counts

    def test_annealed_to_zero_reports_no_changes(self):
        net = self._net(seed=2)
        cfg = ExploreConfig(p=0.3, anneal="cosine", anneal_t_end=100)
        report = explore(net, None, cfg, iteration=100, seed=0)
        assert report.total_changed == 0

    def test_pruned_weights_have_zero_value_and_velocity(self):
        net = self._net(seed=3)
        opt = OptimizerState(momentum=0.9)
        for name, param, _ in net.named_params():
            opt.velocity(name, param.shape)[...] = 1.0  # pretend history
        cfg = ExploreConfig(p=0.5, grow_criterion="random")
        explore(net, None, cfg, iteration=1, seed=4, opt=opt)
        for i, layer in enumerate(net.layers):
            off = ~layer.param.mask
            assert not layer.param.values[off].any()
            assert not opt.velocities[f"l{i}.w"][off].any()

    def test_gradient_growth_uses_dense_grads(self):
        net = self._net(seed=5)
        rng = np.random.default_rng(6)
        x = rng.standard_normal((8, 10))
        y = rng.integers(0, 4, size=8)
        _, grads = net.loss_and_grads(x, y, train=True)
        cfg = ExploreConfig(p=0.3, grow_criterion="gradient")
        inactive0 = ~net.layers[0].param.mask
        report = explore(net, grads, cfg, iteration=1, seed=7)
        pruned0, grown0 = report.per_layer[0]
        assert pruned0 == grown0 > 0
        grown_mask = net.layers[0].param.mask & inactive0
        # Every grown slot's |grad| must be at least the best left behind.
        g = np.abs(grads["l0.w"])
        left = inactive0 & ~net.layers[0].param.mask
        assert g[grown_mask].min() >= g[left].max() - 1e-12


def test_explore_config_validation():
    with pytest.raises(ValueError):
        ExploreConfig(p=0.0)
    with pytest.raises(ValueError):
        ExploreConfig(p=0.3, delta_t=0)
    with pytest.raises(ValueError):
        ExploreConfig(p=0.3, grow_criterion="momentum")
    with pytest.raises(ValueError):
        GranetSchedule(0.9, 0.5, 0, 10)
