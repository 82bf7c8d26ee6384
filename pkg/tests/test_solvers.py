import numpy as np
import numpy.testing as npt
import pytest

from cbflab.network import BeamformerSet, ChannelState, NetworkConfig, compute_metrics, sum_rate
from cbflab.solvers import (
    StructuredParams,
    bisect_mu,
    mrt_beamformer,
    mslnr_beamformer,
    rayleigh_quotient,
    solve_leakage_system,
    structured_beamformer,
    structured_directions,
    wmmse,
    wmmse_multi_init,
)


def make_net(n, k, m, p_max=1.0, noise=1.0):
    return NetworkConfig(
        num_cells=n,
        users_per_cell=k,
        array_rows=1,
        array_cols=m,
        max_power=p_max,
        noise_power=noise,
    )


def rayleigh_channel(n, k, m, seed):
    rng = np.random.default_rng(seed)
    h = rng.standard_normal((n, n, k, m)) + 1j * rng.standard_normal((n, n, k, m))
    return ChannelState(slot_index=0, h=h / np.sqrt(2.0))


def unit_probe(rng, m):
    v = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    return v / np.linalg.norm(v)


# -- wmmse ------------------------------------------------------------------


def test_wmmse_single_user_reaches_capacity():
    net = make_net(1, 1, 2)
    h = np.zeros((1, 1, 1, 2), dtype=complex)
    h[0, 0, 0] = np.array([1.0, 1.0]) / np.sqrt(2.0)
    ch = ChannelState(slot_index=0, h=h)
    beams, state = wmmse(ch, net, init_seed=3)
    rate = sum_rate(compute_metrics(ch, beams, net))
    assert rate == pytest.approx(1.0, abs=1e-6)  # log2(1 + P*|h|^2/noise) = 1
    # converged to full-power MRT
    assert beams.powers[0, 0] == pytest.approx(1.0, rel=1e-6)
    direction = beams.directions[0, 0]
    assert abs(np.vdot(direction, h[0, 0, 0] / np.linalg.norm(h[0, 0, 0]))) == pytest.approx(
        1.0, abs=1e-9
    )


@pytest.mark.parametrize("seed", range(12))
def test_wmmse_weighted_rate_ascends(seed):
    # Block-coordinate updates never decrease sum(log2 v); slack covers the
    # 1e-8 relative bisection power tolerance.
    net = make_net(3, 2, 4)
    ch = rayleigh_channel(3, 2, 4, seed)
    _, state = wmmse(ch, net, init_seed=seed + 1000)
    increments = np.diff(state.rate_history)
    assert increments.min() >= -2e-8


def test_wmmse_power_feasible_each_iteration():
    net = make_net(3, 2, 4)
    ch = rayleigh_channel(3, 2, 4, seed=5)
    for cap in range(1, 6):
        beams, _ = wmmse(ch, net, max_iter=cap, init_seed=7)
        per_bs = beams.powers.sum(axis=1)
        assert np.all(per_bs <= net.max_power * (1.0 + 1e-9))


def test_wmmse_final_weights_match_achieved_rates():
    net = make_net(3, 2, 4)
    ch = rayleigh_channel(3, 2, 4, seed=8)
    beams, state = wmmse(ch, net, init_seed=2)
    achieved = sum_rate(compute_metrics(ch, beams, net))
    assert np.log2(state.final_v).sum() == pytest.approx(achieved, abs=1e-9)


def test_wmmse_truncation_flag():
    net = make_net(3, 2, 4)
    ch = rayleigh_channel(3, 2, 4, seed=1)
    _, state = wmmse(ch, net, stop_eps=1e-12, max_iter=3, init_seed=0)
    assert state.truncated
    assert state.iterations == 3


def test_wmmse_orthogonal_two_user_grid_oracle():
    # Orthogonal single-cell channels decouple: WMMSE must match a brute-force
    # power split over MRT beams and keep the beams orthogonal.
    net = make_net(1, 2, 2, p_max=2.0)
    h = np.zeros((1, 1, 2, 2), dtype=complex)
    g1, g2 = 1.3, 0.6
    h[0, 0, 0] = [g1, 0.0]
    h[0, 0, 1] = [0.0, g2]
    ch = ChannelState(slot_index=0, h=h)
    beams, _ = wmmse(ch, net, stop_eps=1e-9, max_iter=2000, init_seed=4)

    grid = np.linspace(0.0, 2.0, 20001)
    rates = np.log2(1.0 + grid * g1**2) + np.log2(1.0 + (2.0 - grid) * g2**2)
    oracle = rates.max()
    achieved = sum_rate(compute_metrics(ch, beams, net))
    assert achieved == pytest.approx(oracle, abs=1e-6)
    assert abs(np.vdot(beams.w[0, 0], beams.w[0, 1])) < 1e-8 * net.max_power
    # each user's rate equals its single-user rate at the allocated power
    metrics = compute_metrics(ch, beams, net)
    p = beams.powers[0]
    npt.assert_allclose(
        metrics.rate[0],
        np.log2(1.0 + p * np.array([g1, g2]) ** 2),
        rtol=1e-9,
    )


def test_multi_init_single_matches_wmmse():
    net = make_net(2, 2, 3)
    ch = rayleigh_channel(2, 2, 3, seed=9)
    solo, _ = wmmse(ch, net, init_seed=17)
    multi = wmmse_multi_init(ch, net, num_inits=1, seed=17)
    npt.assert_array_equal(solo.w, multi.w)


def test_multi_init_never_worse():
    net = make_net(2, 2, 3)
    gains = []
    for seed in range(20):
        ch = rayleigh_channel(2, 2, 3, seed=seed)
        one = sum_rate(
            compute_metrics(ch, wmmse_multi_init(ch, net, num_inits=1, seed=5), net)
        )
        ten = sum_rate(
            compute_metrics(ch, wmmse_multi_init(ch, net, num_inits=10, seed=5), net)
        )
        assert ten >= one - 1e-12
        gains.append(ten - one)
    assert np.mean(gains) > 0.0


# -- bisection --------------------------------------------------------------


def test_bisect_closed_form_solution():
    # power(mu) = 4 / (1 + mu)^2 = 1  =>  mu = 1
    b0 = np.eye(2, dtype=complex)
    targets = np.array([[2.0, 0.0]], dtype=complex)
    mu = bisect_mu(b0, targets, p_max=1.0)
    assert mu == pytest.approx(1.0, rel=1e-6)


def test_bisect_zero_targets():
    b0 = np.eye(3, dtype=complex)
    mu = bisect_mu(b0, np.zeros((2, 3), dtype=complex), p_max=1.0)
    assert mu == 0.0


def test_bisect_unconstrained_feasible():
    b0 = 4.0 * np.eye(2, dtype=complex)
    targets = np.array([[1.0, 0.0]], dtype=complex)
    # pinv power = 1/16 <= 1
    assert bisect_mu(b0, targets, p_max=1.0) == 0.0


def test_bisect_power_profile_decreasing_and_met():
    rng = np.random.default_rng(3)
    for trial in range(5):
        g = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        b0 = g @ g.conj().T
        targets = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
        p_max = 0.5
        mu = bisect_mu(b0, targets, p_max)
        # independent oracle: direct solves on a mu grid
        def power(m):
            x = np.linalg.solve(b0 + m * np.eye(4), targets.T)
            return float(np.sum(np.abs(x) ** 2))

        grid = np.linspace(mu + 1e-6, mu + 5.0, 30)
        vals = [power(m) for m in grid]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        if mu > 0:
            assert abs(power(mu) - p_max) <= 1e-7 * p_max
            assert power(mu) <= p_max * (1.0 + 1e-9)


def test_bisect_singular_needs_positive_mu():
    # Rank-deficient leakage with target energy outside the range space:
    # the unconstrained power blows up, so a positive multiplier is needed.
    b0 = np.diag([1.0, 0.0]).astype(complex)
    targets = np.array([[0.0, 1.0]], dtype=complex)
    mu = bisect_mu(b0, targets, p_max=4.0)
    assert mu > 0.0
    x = np.linalg.solve(b0 + mu * np.eye(2), targets[0])
    assert np.sum(np.abs(x) ** 2) <= 4.0 * (1.0 + 1e-9)


def test_bisect_rejects_non_hermitian():
    b0 = np.array([[1.0, 1.0], [0.0, 1.0]], dtype=complex)
    with pytest.raises(ValueError, match="Hermitian"):
        bisect_mu(b0, np.ones((1, 2), dtype=complex), p_max=1.0)


def test_solve_leakage_singular_raises_helpfully():
    b0 = np.zeros((2, 2), dtype=complex)
    with pytest.raises(ArithmeticError, match="mu > 0"):
        solve_leakage_system(b0, np.array([[1.0, 0.0]], dtype=complex), 0.0)


# -- structured beamformer ----------------------------------------------------


def local_csi(seed, n=2, k=2, m=4):
    rng = np.random.default_rng(seed)
    h = rng.standard_normal((n, k, m)) + 1j * rng.standard_normal((n, k, m))
    return h / np.sqrt(2.0)


def test_structured_zero_alpha_recovers_mrt():
    h = local_csi(0)
    params = StructuredParams(
        alpha=np.zeros((2, 2)), mu=1.0, q=np.array([0.5, 0.5]), q_total=1.0
    )
    w = structured_beamformer(h, 0, params, p_max=2.0)
    for k in range(2):
        mrt = mrt_beamformer(h[0, k])
        assert abs(np.vdot(w[k] / np.linalg.norm(w[k]), mrt)) == pytest.approx(
            1.0, abs=1e-12
        )


def test_structured_joint_scaling_invariance():
    h = local_csi(1)
    rng = np.random.default_rng(2)
    alpha = rng.uniform(0.0, 1.0, (2, 2))
    a = structured_directions(h, 0, alpha, 0.37)
    b = structured_directions(h, 0, 7.3 * alpha, 7.3 * 0.37)
    align = np.abs(np.einsum("km,km->k", a.conj(), b))
    npt.assert_allclose(align, 1.0, atol=1e-10)


def test_structured_power_split_identity():
    h = local_csi(3)
    params = StructuredParams(
        alpha=np.full((2, 2), 0.5), mu=0.8, q=np.array([0.3, 0.7]), q_total=0.6
    )
    w = structured_beamformer(h, 1, params, p_max=5.0)
    total = np.sum(np.abs(w) ** 2)
    assert total == pytest.approx(5.0 * 0.6, rel=1e-9)
    per_user = np.sum(np.abs(w) ** 2, axis=1)
    npt.assert_allclose(per_user, 5.0 * 0.6 * np.array([0.3, 0.7]), rtol=1e-9)


def test_structured_all_ones_matches_direct_matrix_oracle():
    # alpha == 1, mu = noise: must align with the explicit per-user
    # exclusion solve (rank-one update only rescales the direction).
    noise = 0.7
    for seed in range(20):
        h = local_csi(seed)
        own = 0
        dirs = structured_directions(h, own, np.ones((2, 2)), noise)
        flat = h.reshape(4, -1)
        for k in range(2):
            a = noise * np.eye(4, dtype=complex)
            for x in range(4):
                if x != own * 2 + k:
                    a += np.outer(flat[x], flat[x].conj())
            oracle = np.linalg.solve(a, h[own, k])
            oracle /= np.linalg.norm(oracle)
            assert abs(np.vdot(dirs[k], oracle)) == pytest.approx(1.0, abs=1e-10)


def test_mslnr_equals_structured_special_case():
    noise = 0.45
    for seed in range(20):
        h = local_csi(seed + 100)
        w_mslnr = mslnr_beamformer(h, 0, noise, p_max=1.0, power_ratios=[0.5, 0.5])
        dirs = structured_directions(h, 0, np.ones((2, 2)), noise)
        for k in range(2):
            a = w_mslnr[k] / np.linalg.norm(w_mslnr[k])
            assert abs(np.vdot(a, dirs[k])) == pytest.approx(1.0, abs=1e-10)


def test_own_user_leakage_weight_is_irrelevant():
    h = local_csi(4)
    alpha = np.full((2, 2), 0.3)
    base = structured_directions(h, 0, alpha, 0.2)
    bumped = alpha.copy()
    bumped[0, 1] = 17.0  # own user (0, 1) of BS 0
    other = structured_directions(h, 0, bumped, 0.2)
    assert abs(np.vdot(base[1], other[1])) == pytest.approx(1.0, abs=1e-10)
    # the change is not a global no-op: user 0's direction does move
    assert abs(np.vdot(base[0], other[0])) < 1.0 - 1e-6


def test_structured_beats_random_probes():
    rng = np.random.default_rng(11)
    for seed in range(5):
        h = local_csi(seed + 50)
        alpha = np.random.default_rng(seed).uniform(0.0, 1.0, (2, 2))
        mu = 0.3
        dirs = structured_directions(h, 0, alpha, mu)
        flat = h.reshape(4, -1)
        for k in range(2):
            best = rayleigh_quotient(dirs[k], h[0, k], alpha.reshape(-1), mu, flat)
            for _ in range(1000):
                probe = unit_probe(rng, 4)
                assert (
                    rayleigh_quotient(probe, h[0, k], alpha.reshape(-1), mu, flat)
                    <= best * (1.0 + 1e-9)
                )


def test_mslnr_beats_random_probes_on_slnr():
    rng = np.random.default_rng(12)
    noise = 0.6
    h = local_csi(77)
    w = mslnr_beamformer(h, 0, noise, p_max=1.0, power_ratios=[0.5, 0.5])
    flat = h.reshape(4, -1)
    for k in range(2):
        exclude = 0 * 2 + k
        keep = [x for x in range(4) if x != exclude]
        alpha = np.ones(len(keep))
        direction = w[k] / np.linalg.norm(w[k])
        best = rayleigh_quotient(direction, h[0, k], alpha, noise, flat[keep])
        for _ in range(1000):
            probe = unit_probe(rng, 4)
            assert (
                rayleigh_quotient(probe, h[0, k], alpha, noise, flat[keep])
                <= best * (1.0 + 1e-9)
            )


def test_structure_recovery_from_converged_state():
    net = make_net(3, 2, 4)
    for seed in range(5):
        ch = rayleigh_channel(3, 2, 4, seed=seed + 300)
        beams, state = wmmse(ch, net, init_seed=seed)
        alpha = state.v * np.abs(state.u) ** 2
        for bs in range(3):
            dirs = structured_directions(ch.h[bs], bs, alpha, state.mu[bs])
            for k in range(2):
                p = beams.powers[bs, k]
                if p <= 1e-12 * net.max_power:
                    continue  # switched-off user: direction undefined
                got = abs(np.vdot(dirs[k], beams.directions[bs, k]))
                assert got >= 1.0 - 1e-8


# -- mrt / quotient ------------------------------------------------------------


def test_mrt_simple_vector():
    w = mrt_beamformer(np.array([3.0, 4.0j]))
    npt.assert_allclose(w, np.array([0.6, 0.8j]))
    assert np.linalg.norm(w) == pytest.approx(1.0)


def test_mrt_collinearity():
    rng = np.random.default_rng(8)
    h = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    w = mrt_beamformer(h)
    assert abs(np.vdot(h, w)) == pytest.approx(np.linalg.norm(h), rel=1e-12)


def test_mrt_rejects_zero():
    with pytest.raises(ValueError):
        mrt_beamformer(np.zeros(3))


def test_quotient_mrt_case():
    h = np.array([1.0 + 1j, 2.0, 0.5j])
    w = h / np.linalg.norm(h)
    val = rayleigh_quotient(w, h, np.zeros(1), 1.0, np.zeros((1, 3)))
    assert val == pytest.approx(np.linalg.norm(h) ** 2, rel=1e-12)


def test_quotient_scale_invariance():
    rng = np.random.default_rng(10)
    h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    leak = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
    alpha = rng.uniform(0.1, 1.0, 3)
    w = unit_probe(rng, 4)
    a = rayleigh_quotient(w, h, alpha, 0.5, leak)
    b = rayleigh_quotient(3.7 * w, h, alpha, 0.5, leak)
    assert a == pytest.approx(b, rel=1e-12)


def test_quotient_zero_denominator():
    with pytest.raises(ArithmeticError):
        rayleigh_quotient(
            np.array([1.0, 0.0]),
            np.array([1.0, 0.0]),
            np.zeros(1),
            0.0,
            np.zeros((1, 2)),
        )


def test_structured_params_validation():
    with pytest.raises(ValueError):
        StructuredParams(alpha=np.zeros((1, 1)), mu=0.0, q=np.array([1.0]), q_total=1.0)
    with pytest.raises(ValueError):
        StructuredParams(
            alpha=np.zeros((1, 1)), mu=1.0, q=np.array([0.6, 0.6]), q_total=1.0
        )
    with pytest.raises(ValueError):
        StructuredParams(
            alpha=-np.ones((1, 1)), mu=1.0, q=np.array([1.0]), q_total=1.0
        )
