import numpy as np
import pytest

from helpers import brute_force_fub, custom_map, flat_map, n_served_loops, small_env
from uavrelay.errors import ConfigError, DomainError
from uavrelay.feasibility import (
    CandidateConfig,
    CandidateSet,
    build_candidates,
    cs_fub,
    n_served,
    served_counts,
)
from uavrelay.radio import LinkParams, ThresholdSet
from uavrelay.terrain import LandCover, MapGenConfig, generate_map

PARAMS = LinkParams()
THR = ThresholdSet()


def _world(env, seed=0):
    world, _ = env.reset(episode_seed=seed)
    return world


class TestBuildCandidates:
    def test_default_count_with_three_users(self):
        env = small_env()
        world = _world(env)
        cands = build_candidates(CandidateConfig(), world)
        assert len(cands) == 8 * 5 * 3 + 3 + 1 + 1  # 125

    def test_only_current_uav(self):
        cfg = CandidateConfig(
            grid_x=0, grid_y=0, altitudes_m=(),
            include_above_users=False, include_centroid=False, include_current_uav=True,
        )
        env = small_env()
        cands = build_candidates(cfg, _world(env))
        assert len(cands) == 1

    def test_uav_on_centroid_dedups(self):
        env = small_env()
        world = _world(env)
        cent = world.users_pos[:, :2].mean(axis=0)
        world.uav_pos = np.array([cent[0], cent[1], 120.0])
        cands = build_candidates(CandidateConfig(), world)
        assert len(cands) == 124

    def test_no_source_rejected(self):
        with pytest.raises(ConfigError):
            CandidateConfig(
                grid_x=0, grid_y=0, altitudes_m=(),
                include_above_users=False, include_centroid=False, include_current_uav=False,
            ).validate()

    def test_altitudes_checked_against_band(self):
        with pytest.raises(ConfigError):
            CandidateConfig(altitudes_m=(60.0, 400.0)).validate(30.0, 300.0)

    def test_empty_set_rejected(self):
        with pytest.raises(DomainError):
            CandidateSet(placements=np.empty((0, 3)))


class TestNServed:
    def test_backhaul_blocked_means_zero(self):
        # NLOS penalty breaks the backhaul budget beyond ~3.2 km
        elev = np.zeros((11, 30), dtype=np.float32)
        elev[:, 10] = 3000.0  # wall between BS side and placement side
        m = custom_map(elev, cell=200.0)
        bs = np.array([300.0, 1100.0, 20.0])
        placement = np.array([4300.0, 1100.0, 100.0])
        users = np.array([[4300.0, 1000.0, 1.5], [4200.0, 1200.0, 1.5]])
        assert n_served(m, PARAMS, THR, placement, users, bs) == 0
        # sanity: same geometry without the wall serves both users
        assert n_served(custom_map(np.zeros((11, 30))), PARAMS, THR, placement, users, bs) == 2

    def test_single_user_overhead(self):
        m = flat_map(11, 11, cell=200.0)
        user = np.array([[1000.0, 1000.0, 1.5]])
        placement = np.array([1000.0, 1000.0, 60.0])
        bs = np.array([1200.0, 1000.0, 20.0])
        assert n_served_loops(m, PARAMS, THR, placement, user, bs) == 1
        assert n_served(m, PARAMS, THR, placement, user, bs) == 1

    def test_clustered_users_all_served(self):
        m = flat_map(11, 11, cell=200.0)
        users = np.array(
            [[1000.0, 1000.0, 1.5], [1150.0, 1050.0, 1.5], [900.0, 1100.0, 1.5]]
        )
        placement = np.array([1000.0, 1050.0, 120.0])
        bs = np.array([1100.0, 1000.0, 20.0])
        assert n_served(m, PARAMS, THR, placement, users, bs) == 3

    def test_matches_loop_oracle_on_rough_terrain(self):
        m = generate_map(MapGenConfig(height=12, width=12, cell_size_m=200.0,
                                      elevation_amplitude_m=300.0, seed=21,
                                      water_fraction=0.1, dense_fraction=0.3))
        rng = np.random.default_rng(5)
        bs = np.array([1200.0, 1200.0, 20.0])
        for _ in range(25):
            users = np.column_stack(
                [rng.uniform(200, 2200, (3, 2)), np.full(3, 1.5)]
            )
            placements = np.column_stack(
                [rng.uniform(200, 2200, (6, 2)), rng.uniform(40, 250, 6)]
            )
            got = served_counts(m, PARAMS, THR, placements, users, bs)
            want = [n_served_loops(m, PARAMS, THR, p, users, bs) for p in placements]
            assert got.tolist() == want


class TestCsFub:
    def test_singleton(self):
        m = flat_map(11, 11, cell=200.0)
        users = np.array([[1000.0, 1000.0, 1.5]])
        bs = np.array([1100.0, 1000.0, 20.0])
        cands = CandidateSet(placements=np.array([[1000.0, 1000.0, 60.0]]))
        n_star, best = cs_fub(m, PARAMS, THR, cands, users, bs)
        assert n_star == 1
        assert np.array_equal(best, cands.placements[0])

    def test_all_blocked_tiebreak_winner(self):
        m = flat_map(11, 11, cell=200.0)
        impossible = ThresholdSet(tau_a_dbm=1e6, tau_b_dbm=1e6)
        users = np.array([[1000.0, 1000.0, 1.5], [1200.0, 1100.0, 1.5]])
        bs = np.array([1100.0, 1000.0, 20.0])
        placements = np.array(
            [[400.0, 400.0, 60.0], [1100.0, 1050.0, 60.0], [1800.0, 1800.0, 60.0]]
        )
        n_star, best = cs_fub(m, PARAMS, impossible, CandidateSet(placements=placements), users, bs)
        assert n_star == 0
        assert np.array_equal(best, placements[1])  # closest to centroid

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(99)
        for trial in range(40):
            m = generate_map(MapGenConfig(
                height=10, width=10, cell_size_m=250.0,
                elevation_amplitude_m=float(rng.uniform(0, 400)),
                seed=int(rng.integers(1 << 30)),
                water_fraction=0.2, dense_fraction=0.25,
            ))
            n_users = int(rng.integers(1, 5))
            users = np.column_stack(
                [rng.uniform(300, 2200, (n_users, 2)), np.full(n_users, 1.5)]
            )
            bs = np.array([rng.uniform(300, 2200), rng.uniform(300, 2200), 20.0])
            n_cand = int(rng.integers(1, 15))
            placements = np.column_stack(
                [rng.uniform(300, 2200, (n_cand, 2)), rng.uniform(30, 280, n_cand)]
            )
            n_star, best = cs_fub(m, PARAMS, THR, CandidateSet(placements=placements), users, bs)
            want_n, want_i = brute_force_fub(m, PARAMS, THR, placements, users, bs)
            assert n_star == want_n
            assert np.array_equal(best, placements[want_i])

    def test_adding_candidates_never_decreases(self):
        m = generate_map(MapGenConfig(height=10, width=10, cell_size_m=250.0,
                                      elevation_amplitude_m=250.0, seed=3))
        rng = np.random.default_rng(1)
        users = np.column_stack([rng.uniform(400, 2000, (3, 2)), np.full(3, 1.5)])
        bs = np.array([1250.0, 1250.0, 20.0])
        placements = np.column_stack(
            [rng.uniform(400, 2000, (10, 2)), rng.uniform(40, 250, 10)]
        )
        prev = -1
        for k in range(1, 11):
            n_star, _ = cs_fub(m, PARAMS, THR, CandidateSet(placements=placements[:k]), users, bs)
            assert n_star >= prev
            prev = n_star

    def test_bounds_and_determinism(self):
        env = small_env()
        world = _world(env, seed=4)
        cands = build_candidates(CandidateConfig(), world)
        a = cs_fub(env.terrain, PARAMS, THR, cands, world.users_pos, env.bs_pos)
        b = cs_fub(env.terrain, PARAMS, THR, cands, world.users_pos, env.bs_pos)
        assert a[0] == b[0] and np.array_equal(a[1], b[1])
        assert 0 <= a[0] <= env.cfg.num_users
