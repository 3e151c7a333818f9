import mpmath
import numpy as np
import pytest

from motionforge import diffusion as dif
from motionforge import kinematics as kin
from motionforge.denoiser import Denoiser, DenoiserConfig
from motionforge.errors import (InvalidInput, InvalidSchedule,
                                OptimizationDiverged, ShapeMismatch)

WIDTH = 16
L, J = 8, 4


class ZeroDenoiser:
    """Predicts zero noise; reverse process becomes a deterministic cascade."""

    def forward(self, x_t, t, scene_emb, action_emb, cache=None, rng=None):
        return np.zeros_like(x_t)


class EchoDenoiser:
    """Returns a pre-set tensor regardless of input."""

    def __init__(self, eps):
        self.eps = eps

    def forward(self, x_t, t, scene_emb, action_emb, cache=None, rng=None):
        return self.eps.reshape(x_t.shape)

    def backward(self, cache, d_out):
        return {}, np.zeros_like(d_out)


def nav_spec(k=2, length=L, joints=J, xy=(0.5, -0.25), width=WIDTH, rng=None):
    rng = rng or np.random.default_rng(0)
    return dif.EpisodeSpec(
        length=length,
        transition_frames=rng.standard_normal((k, joints, 3)),
        subgoal=dif.NavigationGoal(np.asarray(xy, dtype=float)),
        scene_emb=np.zeros(width),
        action_emb=np.zeros(width),
    )


# ---------------------------------------------------------------------------
# schedule


def test_schedule_single_step():
    s = dif.make_schedule(1, 0.1, 0.1)
    assert np.allclose(s.alpha, [0.9])
    assert np.allclose(s.alpha_bar, [0.9])


def test_schedule_constant_beta_powers():
    s = dif.make_schedule(10, 0.05, 0.05)
    assert np.allclose(s.alpha, 0.95)
    assert np.allclose(s.alpha_bar, 0.95 ** np.arange(1, 11))


def test_schedule_alpha_bar_matches_high_precision_product():
    s = dif.make_schedule(50, 1e-4, 0.02)
    with mpmath.workdps(50):
        betas = [mpmath.mpf("1e-4") + (mpmath.mpf("0.02") - mpmath.mpf("1e-4"))
                 * i / 49 for i in range(50)]
        prod = mpmath.mpf(1)
        for b in betas:
            prod *= 1 - b
        expected = float(prod)
    assert s.alpha_bar[49] == pytest.approx(expected, rel=1e-14)


def test_schedule_invariants():
    s = dif.make_schedule(50)
    assert np.all((s.alpha > 0) & (s.alpha < 1))
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert np.abs(s.alpha_bar - np.cumprod(s.alpha)).max() < 1e-12


def test_schedule_rejects_bad_ranges():
    with pytest.raises(InvalidSchedule):
        dif.make_schedule(0)
    with pytest.raises(InvalidSchedule):
        dif.make_schedule(10, 0.2, 0.1)
    with pytest.raises(InvalidSchedule):
        dif.make_schedule(10, 0.0, 0.1)


# ---------------------------------------------------------------------------
# forward noising


def test_forward_noise_fully_masked_is_exact():
    rng = np.random.default_rng(1)
    x0 = rng.standard_normal((L, J, 3))
    s = dif.make_schedule(50)
    x_t, eps = dif.forward_noise(x0, 30, s, np.ones_like(x0, dtype=bool), rng)
    assert np.array_equal(x_t, x0)
    assert np.array_equal(eps, np.zeros_like(x0))


def test_forward_noise_no_noise_limit():
    rng = np.random.default_rng(2)
    x0 = rng.standard_normal((L, J, 3))
    s = dif.make_schedule(50, 1e-6, 1e-6)
    x_t, eps = dif.forward_noise(x0, 0, s, None, rng)
    bound = np.sqrt(1 - s.alpha_bar[0]) * np.abs(eps) \
        + (1 - np.sqrt(s.alpha_bar[0])) * np.abs(x0)
    assert np.all(np.abs(x_t - x0) <= bound + 1e-12)


def test_forward_noise_monte_carlo_moments():
    rng = np.random.default_rng(3)
    s = dif.make_schedule(50)
    t = 40
    n = 100_000
    x0 = np.zeros((n, 1, 1))
    x_t, _ = dif.forward_noise(x0, t, s, None, rng)
    samples = x_t.ravel()
    var = 1.0 - s.alpha_bar[t]
    se_mean = np.sqrt(var / n)
    se_var = var * np.sqrt(2.0 / (n - 1))
    assert abs(samples.mean()) < 3 * se_mean
    assert abs(samples.var() - var) < 3 * se_var


def test_forward_noise_rejects_bad_t():
    s = dif.make_schedule(10)
    with pytest.raises(InvalidInput):
        dif.forward_noise(np.zeros((2, 2, 3)), 10, s, None,
                          np.random.default_rng(0))


# ---------------------------------------------------------------------------
# training loss


def test_loss_zero_for_oracle_denoiser():
    rng = np.random.default_rng(4)
    s = dif.make_schedule(50)
    x0 = rng.standard_normal((L, J, 3))
    x_t, eps = dif.forward_noise(x0, 20, s, None, rng)
    oracle = EchoDenoiser(eps)
    conds = {"scene": np.zeros(WIDTH), "action": np.zeros(WIDTH)}
    loss, _ = dif.loss_and_grads_given_noised(oracle, x_t, 20, eps, conds, None)
    assert loss == 0.0


def test_loss_quadratic_region_is_half_mse():
    rng = np.random.default_rng(5)
    eps = rng.standard_normal((L, J, 3))
    pred = eps + rng.uniform(-0.5, 0.5, eps.shape)  # residuals within delta
    oracle = EchoDenoiser(pred)
    conds = {"scene": np.zeros(WIDTH), "action": np.zeros(WIDTH)}
    mask = np.zeros(eps.shape, dtype=bool)
    mask[:2] = True
    loss, _ = dif.loss_and_grads_given_noised(
        oracle, np.zeros_like(eps), 0, eps, conds, mask)
    r = (pred - eps)[~mask]
    assert loss == pytest.approx(0.5 * np.mean(r * r), rel=1e-12)


def test_loss_masked_entries_do_not_contribute():
    rng = np.random.default_rng(6)
    eps = rng.standard_normal((L, J, 3))
    pred = eps.copy()
    pred[0] += 100.0  # huge error only on frames that the mask hides
    mask = np.zeros(eps.shape, dtype=bool)
    mask[0] = True
    oracle = EchoDenoiser(pred)
    conds = {"scene": np.zeros(WIDTH), "action": np.zeros(WIDTH)}
    loss, _ = dif.loss_and_grads_given_noised(
        oracle, np.zeros_like(eps), 0, eps, conds, mask)
    assert loss == 0.0


def test_training_loss_gradients_match_finite_differences():
    cfg = DenoiserConfig(width=WIDTH, layers=1, heads=2, ffn_width=24,
                         dropout=0.0, max_frames=L, joint_dim=J * 3,
                         timesteps=10)
    model = Denoiser(cfg, seed=1)
    rng = np.random.default_rng(7)
    s = dif.make_schedule(10)
    x0 = rng.standard_normal((L, J, 3))
    spec = nav_spec()
    mask = spec.mask().combined
    t = 4
    x_t, eps = dif.forward_noise(x0, t, s, mask, rng)
    conds = {"scene": rng.standard_normal(WIDTH),
             "action": rng.standard_normal(WIDTH)}

    _, grads = dif.loss_and_grads_given_noised(model, x_t, t, eps, conds, mask)

    def loss():
        return dif.loss_and_grads_given_noised(model, x_t, t, eps, conds,
                                               mask)[0]

    h = 1e-5
    rng2 = np.random.default_rng(8)
    for name, p in model.named_params():
        flat = p.ravel()
        g = grads[name].ravel()
        idx = rng2.choice(flat.size, size=min(6, flat.size), replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            fp = loss()
            flat[i] = old - h
            fm = loss()
            flat[i] = old
            num = (fp - fm) / (2 * h)
            assert abs(num - g[i]) <= 1e-4 * max(abs(num), abs(g[i]), 1e-4), name


# ---------------------------------------------------------------------------
# sampling


def test_sample_full_mask_returns_conditioning():
    rng = np.random.default_rng(9)
    cond = rng.standard_normal((L, J, 3))
    mask = np.ones_like(cond, dtype=bool)
    s = dif.make_schedule(20)
    out = dif.sample_with_mask(ZeroDenoiser(), mask, cond, np.zeros(WIDTH),
                               np.zeros(WIDTH), s, rng)
    assert np.array_equal(out, cond)


def test_sample_zero_denoiser_matches_scalar_oracle():
    # production uses the posterior (x0-form) update; the oracle applies the
    # textbook epsilon-form mean, which is the same map algebraically
    seed = 123
    s = dif.make_schedule(30)
    spec = nav_spec()
    mask = spec.mask().combined
    cond = spec.conditioning()

    out = dif.sample_with_mask(ZeroDenoiser(), mask, cond, spec.scene_emb,
                               spec.action_emb, s,
                               np.random.default_rng(seed), clip_x0=None)

    rng = np.random.default_rng(seed)
    x = rng.standard_normal((L, J, 3))
    x[mask] = cond[mask]
    for t in range(s.timesteps - 1, -1, -1):
        a = s.alpha[t]
        x = x / np.sqrt(a)  # zero noise prediction drops the correction term
        if t > 0:
            x = x + np.sqrt(1.0 - a) * rng.standard_normal((L, J, 3))
        x[mask] = cond[mask]
    assert np.allclose(out, x, rtol=1e-9, atol=1e-12)


def test_sample_clipping_bounds_unmasked_state():
    # with the clamp active no unmasked coordinate can leave the bound by
    # more than the final noise kick
    rng = np.random.default_rng(77)
    s = dif.make_schedule(30, 0.002, 0.4)
    spec = nav_spec()
    mask = spec.mask().combined

    class HugeDenoiser:
        def forward(self, x_t, t, scene_emb, action_emb):
            return np.full_like(x_t, -3.0)

    out = dif.sample_with_mask(HugeDenoiser(), mask, spec.conditioning(),
                               spec.scene_emb, spec.action_emb, s, rng,
                               clip_x0=5.0)
    assert np.abs(out[~mask]).max() < 5.0 + 4.0  # bound + noise margin


def test_sample_goal_written_exactly():
    s = dif.make_schedule(10)
    spec = nav_spec(xy=(1.25, -0.75))
    out = dif.sample_episode(ZeroDenoiser(), spec, s, np.random.default_rng(0))
    assert out[-1, dif.PELVIS, 0] == 1.25
    assert out[-1, dif.PELVIS, 1] == -0.75
    assert np.array_equal(out[:2], spec.transition_frames)


def test_sample_joint_goal_mask():
    rng = np.random.default_rng(10)
    spec = dif.EpisodeSpec(
        length=L,
        transition_frames=rng.standard_normal((2, J, 3)),
        subgoal=dif.JointGoal(3, np.array([0.1, 0.2, 0.3])),
        scene_emb=np.zeros(WIDTH), action_emb=np.zeros(WIDTH))
    m = spec.mask()
    assert m.goal[L - 1, 3].all()
    assert m.goal.sum() == 3
    assert m.transition[:2].all() and not m.transition[2:].any()
    out = dif.sample_episode(ZeroDenoiser(), spec, dif.make_schedule(10),
                             np.random.default_rng(1))
    assert np.array_equal(out[-1, 3], [0.1, 0.2, 0.3])


def test_mask_preserved_at_every_step():
    rng = np.random.default_rng(11)
    s = dif.make_schedule(25)
    spec = nav_spec(rng=rng)
    mask = spec.mask().combined
    cond = spec.conditioning()
    seen = []

    def check(t, x):
        seen.append(t)
        assert np.array_equal(x[mask], cond[mask])

    dif.sample_with_mask(ZeroDenoiser(), mask, cond, spec.scene_emb,
                         spec.action_emb, s, rng, callback=check)
    assert seen == list(range(24, -1, -1))


def test_episode_spec_validation():
    with pytest.raises(InvalidInput):
        dif.EpisodeSpec(4, np.zeros((4, J, 3)),
                        dif.NavigationGoal(np.zeros(2)),
                        np.zeros(WIDTH), np.zeros(WIDTH))  # k == length
    with pytest.raises(InvalidInput):
        dif.EpisodeSpec(8, np.zeros((2, J, 3)), "goal",
                        np.zeros(WIDTH), np.zeros(WIDTH))


# ---------------------------------------------------------------------------
# stitching


def test_generate_long_single_episode_length():
    s = dif.make_schedule(5)
    out = dif.generate_long(ZeroDenoiser(), [nav_spec()], 2, s,
                            np.random.default_rng(0))
    assert out.shape == (L, J, 3)


def test_generate_long_replay_overlaps_bit_exact():
    s = dif.make_schedule(8)
    k = 2
    rng_specs = np.random.default_rng(12)
    specs = [nav_spec(k=k, xy=(0.5, 0.0), rng=rng_specs),
             nav_spec(k=k, xy=(1.0, 0.2), rng=rng_specs),
             nav_spec(k=k, xy=(1.5, -0.2), rng=rng_specs)]

    out = dif.generate_long(ZeroDenoiser(), specs, k, s,
                            np.random.default_rng(99))
    assert out.shape == (3 * L - 2 * k, J, 3)

    # replay the chain manually and check every overlap
    rng = np.random.default_rng(99)
    transition = specs[0].transition_frames
    episodes = []
    for spec in specs:
        spec = dif.EpisodeSpec(spec.length, transition, spec.subgoal,
                               spec.scene_emb, spec.action_emb)
        ep = dif.sample_episode_recentered(ZeroDenoiser(), spec, s, rng)
        episodes.append(ep)
        transition = ep[-k:]
    for prev, nxt in zip(episodes, episodes[1:]):
        assert np.array_equal(prev[-k:], nxt[:k])
    stitched = np.concatenate([episodes[0]] + [e[k:] for e in episodes[1:]])
    assert np.array_equal(out, stitched)


def test_generate_long_length_formula():
    s = dif.make_schedule(4)
    rng_specs = np.random.default_rng(13)
    specs = [nav_spec(k=2, length=16, rng=rng_specs) for _ in range(3)]
    out = dif.generate_long(ZeroDenoiser(), specs, 2, s,
                            np.random.default_rng(5))
    assert len(out) == 3 * 16 - 2 * 2 == 44


def test_generate_long_empty_rejected():
    with pytest.raises(InvalidInput):
        dif.generate_long(ZeroDenoiser(), [], 2, dif.make_schedule(4),
                          np.random.default_rng(0))


def test_recentered_episode_keeps_world_conditioning():
    s = dif.make_schedule(6)
    rng = np.random.default_rng(14)
    trans = rng.standard_normal((2, J, 3)) + np.array([5.0, -3.0, 0.0])
    spec = dif.EpisodeSpec(L, trans, dif.NavigationGoal(np.array([6.0, -2.5])),
                           np.zeros(WIDTH), np.zeros(WIDTH))
    out = dif.sample_episode_recentered(ZeroDenoiser(), spec, s,
                                        np.random.default_rng(3))
    assert np.array_equal(out[:2], trans)
    assert out[-1, dif.PELVIS, 0] == 6.0 and out[-1, dif.PELVIS, 1] == -2.5


# ---------------------------------------------------------------------------
# pose fitting


def test_fit_pose_params_fixed_point():
    sk = kin.default_skeleton()
    rng = np.random.default_rng(15)
    pose = kin.Pose.rest(sk)
    pose.bone_rotations += 0.2 * rng.standard_normal((24, 6))
    joints = kin.forward_kinematics(sk, pose)
    window = np.stack([joints, joints, joints])
    res = dif.fit_pose_params(window, sk, pose)
    assert np.array_equal(res.pose.bone_rotations, pose.bone_rotations)


def test_fit_pose_params_round_trip_from_rest():
    sk = kin.default_skeleton()
    rng = np.random.default_rng(16)
    pose = kin.Pose.rest(sk)
    pose.bone_rotations += 0.25 * rng.standard_normal((24, 6))
    pose.root_translation = np.array([0.3, -0.2, 0.9])
    joints = kin.forward_kinematics(sk, pose)
    res = dif.fit_pose_params(np.stack([joints] * 3), sk, kin.Pose.rest(sk))
    assert res.max_joint_error < 1e-3


def test_fit_pose_params_rest_gives_identity():
    sk = kin.default_skeleton()
    joints = kin.forward_kinematics(sk, kin.Pose.rest(sk))
    res = dif.fit_pose_params(np.stack([joints] * 3), sk, kin.Pose.rest(sk))
    assert np.allclose(res.pose.root_translation, 0)
    assert res.max_joint_error < 1e-9


def test_fit_pose_params_rejects_bad_window():
    sk = kin.default_skeleton()
    with pytest.raises(ShapeMismatch):
        dif.fit_pose_params(np.zeros((2, 24, 3)), sk, kin.Pose.rest(sk))


def test_fit_pose_divergence_detected(monkeypatch):
    # drive the detector with a loss that rises every step
    sk = kin.default_skeleton()
    counter = {"n": 0}

    def rising_loss(skeleton, pose, targets, weights=None):
        counter["n"] += 1
        return (float(counter["n"]), np.zeros(3),
                np.zeros((skeleton.joint_count, 6)))

    monkeypatch.setattr(kin, "fk_loss_and_grad", rising_loss)
    goal = np.zeros((24, 3))
    with pytest.raises(OptimizationDiverged):
        kin.fit_pose(sk, goal, kin.Pose.rest(sk), max_iters=50,
                     alignment_candidate=False)


def test_fit_motion_params_tracks_sequence():
    sk = kin.default_skeleton()
    rng = np.random.default_rng(18)
    base = kin.Pose.rest(sk, (0, 0, 0.9))
    frames = []
    pose = base.copy()
    for _ in range(5):
        pose = pose.copy()
        pose.bone_rotations += 0.05 * rng.standard_normal((24, 6))
        frames.append(kin.forward_kinematics(sk, pose))
    poses, errors = dif.fit_motion_params(np.stack(frames), sk)
    assert len(poses) == 5
    assert max(errors) < 1e-3


# ---------------------------------------------------------------------------
# motion files


def test_motion_json_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(19)
    frames = rng.standard_normal((5, 24, 3))
    path = tmp_path / "motion.json"
    dif.save_motion(frames, str(path), fps=10)
    loaded, fps, names = dif.load_motion(str(path))
    assert fps == 10
    assert len(names) == 24
    assert np.array_equal(loaded, frames)
    # serialize again: byte-identical file
    path2 = tmp_path / "motion2.json"
    dif.save_motion(loaded, str(path2), fps=fps, joint_names=names)
    assert path.read_bytes() == path2.read_bytes()
