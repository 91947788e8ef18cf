import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csf.spatial import (
    FrameMismatch,
    Transform,
    Twist,
    Wrench,
    compose,
    invert,
    mat_to_quat,
    pose7,
    quat_canonical,
    quat_from_axis_angle,
    quat_mul,
    quat_to_mat,
    relative_target,
    rotate_twist_to_ee,
)


def rz(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def hom(rot, trans):
    m = np.eye(4)
    m[:3, :3] = rot
    m[:3, 3] = trans
    return m


def random_transform(rng, from_frame="a", to_frame="b"):
    q = rng.normal(size=4)
    return Transform(quat_to_mat(q / np.linalg.norm(q)), rng.normal(size=3),
                     from_frame, to_frame)


class TestCompose:
    def test_identity(self):
        t = Transform(rz(0.3), [1.0, 2.0, 3.0], "a", "b")
        out = compose(Transform.identity("a"), Transform(t.rot, t.trans, "a", "b"))
        np.testing.assert_allclose(out.rot, t.rot)
        np.testing.assert_allclose(out.trans, t.trans)

    def test_inverse_gives_identity(self):
        rng = np.random.default_rng(0)
        t = random_transform(rng)
        out = compose(t, invert(t))
        np.testing.assert_allclose(out.rot, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(out.trans, 0.0, atol=1e-12)
        assert out.from_frame == out.to_frame == "a"

    def test_matches_homogeneous_matrix_oracle(self):
        # Rz(90deg), t=(1,0,0) composed with identity rotation, t=(0,1,0)
        a = Transform(rz(np.pi / 2), [1.0, 0.0, 0.0], "a", "b")
        b = Transform(np.eye(3), [0.0, 1.0, 0.0], "b", "c")
        expected = hom(a.rot, a.trans) @ hom(b.rot, b.trans)
        out = compose(a, b)
        np.testing.assert_allclose(hom(out.rot, out.trans), expected, atol=1e-15)
        # frozen oracle values: the rotation survives, the translations cancel
        np.testing.assert_allclose(out.rot, rz(np.pi / 2), atol=1e-15)
        np.testing.assert_allclose(out.trans, [0.0, 0.0, 0.0], atol=1e-15)

    def test_frame_mismatch_rejected(self):
        a = Transform(np.eye(3), np.zeros(3), "a", "b")
        c = Transform(np.eye(3), np.zeros(3), "c", "d")
        with pytest.raises(FrameMismatch):
            compose(a, c)

    def test_associative_on_random_triples(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            a = random_transform(rng, "a", "b")
            b = random_transform(rng, "b", "c")
            c = random_transform(rng, "c", "d")
            left = compose(compose(a, b), c)
            right = compose(a, compose(b, c))
            assert np.max(np.abs(left.rot - right.rot)) < 1e-10
            assert np.max(np.abs(left.trans - right.trans)) < 1e-10


class TestInvert:
    def test_identity(self):
        out = invert(Transform.identity("a"))
        np.testing.assert_allclose(out.rot, np.eye(3))
        np.testing.assert_allclose(out.trans, 0.0)

    def test_pure_translation(self):
        out = invert(Transform(np.eye(3), [1.0, 2.0, 3.0], "a", "b"))
        np.testing.assert_allclose(out.trans, [-1.0, -2.0, -3.0])
        assert (out.from_frame, out.to_frame) == ("b", "a")

    def test_double_inverse_is_identity(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            t = random_transform(rng)
            back = invert(invert(t))
            np.testing.assert_allclose(back.rot, t.rot, atol=1e-12)
            np.testing.assert_allclose(back.trans, t.trans, atol=1e-12)


class TestRelativeTarget:
    def test_matched_inputs_give_identity_features(self):
        rng = np.random.default_rng(3)
        t = random_transform(rng, "b", "e")
        _, feats = relative_target(t, Transform(t.rot, t.trans, "b", "t"))
        np.testing.assert_allclose(feats, [0, 0, 0, 0, 0, 0, 1], atol=1e-12)

    def test_identity_ee_passes_target_through(self):
        target = Transform(rz(0.4), [0.1, 0.2, 0.3], "b", "t")
        _, feats = relative_target(Transform.identity("b"), target)
        np.testing.assert_allclose(feats[:3], target.trans)
        np.testing.assert_allclose(quat_to_mat(feats[3:]), target.rot, atol=1e-12)

    def test_rotated_ee_oracle(self):
        # ee at origin rotated +90deg about z; target at (1,0,0):
        # homogeneous-matrix oracle gives position (0,-1,0) in the ee frame
        b_T_e = Transform(rz(np.pi / 2), [0.0, 0.0, 0.0], "b", "e")
        b_T_t = Transform(np.eye(3), [1.0, 0.0, 0.0], "b", "t")
        expected = np.linalg.inv(hom(b_T_e.rot, b_T_e.trans)) @ hom(b_T_t.rot, b_T_t.trans)
        e_T_t, feats = relative_target(b_T_e, b_T_t)
        np.testing.assert_allclose(feats[:3], expected[:3, 3], atol=1e-12)
        np.testing.assert_allclose(feats[:3], [0.0, -1.0, 0.0], atol=1e-12)


class TestRotateTwist:
    def test_identity(self):
        tw = Twist([1.0, 2.0, 3.0], [0.1, 0.2, 0.3], "b")
        out = rotate_twist_to_ee(np.eye(3), tw)
        np.testing.assert_allclose(out.linear, tw.linear)
        np.testing.assert_allclose(out.angular, tw.angular)
        assert out.frame == "e"

    def test_rz90_transpose_oracle(self):
        out = rotate_twist_to_ee(rz(np.pi / 2).T, Twist([1.0, 0, 0], [0, 0, 0], "b"))
        np.testing.assert_allclose(out.linear, [0.0, -1.0, 0.0], atol=1e-15)

    def test_zero(self):
        out = rotate_twist_to_ee(rz(1.0), Twist.zero("b"))
        np.testing.assert_allclose(out.as_array(), 0.0)

    def test_norm_preserved(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            rot = random_transform(rng).rot
            tw = Twist(rng.normal(size=3), rng.normal(size=3), "b")
            out = rotate_twist_to_ee(rot, tw)
            assert abs(np.linalg.norm(out.linear) - np.linalg.norm(tw.linear)) < 1e-12
            assert abs(np.linalg.norm(out.angular) - np.linalg.norm(tw.angular)) < 1e-12


class TestCanonicalQuat:
    def test_sign_flip(self):
        np.testing.assert_allclose(quat_canonical([0, 0, 0, -1]), [0, 0, 0, 1])

    def test_normalization(self):
        np.testing.assert_allclose(quat_canonical([0, 0, 0, 2]), [0, 0, 0, 1])

    def test_normalize_then_flip_oracle(self):
        np.testing.assert_allclose(quat_canonical([0.6, 0, 0, -0.8]),
                                   [-0.6, 0, 0, 0.8], atol=1e-15)

    def test_zero_rejected(self):
        with pytest.raises(ValueError):
            quat_canonical([0.0, 0.0, 0.0, 0.0])

    @given(st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(
        lambda q: sum(x * x for x in q) > 1e-6))
    @settings(max_examples=200, deadline=None)
    def test_idempotent_and_same_rotation(self, q):
        c1 = quat_canonical(q)
        c2 = quat_canonical(c1)
        np.testing.assert_allclose(c1, c2, atol=1e-12)
        np.testing.assert_allclose(quat_to_mat(q), quat_to_mat(c1), atol=1e-9)
        assert c1[3] >= 0


class TestQuatMatRoundTrip:
    def test_round_trip(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            q = quat_canonical(rng.normal(size=4))
            np.testing.assert_allclose(mat_to_quat(quat_to_mat(q)), q, atol=1e-12)

    def test_mul_matches_matrix_product(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            q1 = quat_canonical(rng.normal(size=4))
            q2 = quat_canonical(rng.normal(size=4))
            np.testing.assert_allclose(quat_to_mat(quat_mul(q1, q2)),
                                       quat_to_mat(q1) @ quat_to_mat(q2), atol=1e-12)

    def test_axis_angle(self):
        np.testing.assert_allclose(quat_to_mat(quat_from_axis_angle([0, 0, 1], np.pi / 2)),
                                   rz(np.pi / 2), atol=1e-12)


def test_pose7_layout():
    t = Transform(rz(0.0), [1.0, 2.0, 3.0], "a", "b")
    np.testing.assert_allclose(pose7(t), [1, 2, 3, 0, 0, 0, 1])


def test_wrench_array_round_trip():
    w = Wrench.from_array([1, 2, 3, 4, 5, 6], "e")
    np.testing.assert_allclose(w.as_array(), [1, 2, 3, 4, 5, 6])
    assert w.frame == "e"
