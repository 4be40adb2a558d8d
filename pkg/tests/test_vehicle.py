import itertools
import math

import numpy as np
import pytest

from cvil.core import (CyclistState, HandHeight, Pose2, SimClock,
                       VehicleState, WorldSnapshot)
from cvil.vehicle import (Observation, Override, PerceptionConfig, TffConfig,
                          TffMode, TffState, VehicleParams, act,
                          full_stop_override, sense, tff_lateral,
                          tff_longitudinal, tff_update_mode,
                          vehicle_dynamics_step)

PARAMS = VehicleParams()
DT = 1.0 / 90.0

HANDS = ("above", "below", "between")


def obs(rel=(10.0, 0.0), hand="between", valid=True, tick=0) -> Observation:
    return Observation(tick_observed=tick, relative_position=rel,
                       hand_above_head=hand == "above",
                       hand_below_shoulder=hand == "below", valid=valid)


def world_with(cyclist_pose: Pose2, vehicle_pose: Pose2 = Pose2(),
               hand: HandHeight = HandHeight.BETWEEN) -> WorldSnapshot:
    return WorldSnapshot(clock=SimClock(0, 90.0),
                         vehicle=VehicleState(pose=vehicle_pose),
                         cyclist=CyclistState(pose=cyclist_pose, hand_height=hand))


class TestGestureFsm:
    def apply(self, mode, armed, hand):
        state = TffState(mode=mode, armed=armed)
        return tff_update_mode(state, obs(hand=hand))

    def test_initial_state(self):
        s = TffState()
        assert s.mode is TffMode.INACTIVE and s.armed

    def test_start_on_raise(self):
        out = self.apply(TffMode.INACTIVE, True, "above")
        assert out.mode is TffMode.ACTIVE and not out.armed
        assert out.pid_integral == 0.0 and out.pid_prev_error is None

    def test_repeat_without_rearm_ignored(self):
        out = self.apply(TffMode.ACTIVE, False, "above")
        assert out.mode is TffMode.ACTIVE and not out.armed

    def test_stop_after_rearm(self):
        mid = self.apply(TffMode.ACTIVE, False, "below")
        assert mid.armed and mid.mode is TffMode.ACTIVE
        out = tff_update_mode(mid, obs(hand="above"))
        assert out.mode is TffMode.INACTIVE and not out.armed

    def test_exhaustive_transition_table(self):
        # all 12 (mode x armed x hand) combinations
        for mode, armed, hand in itertools.product(TffMode, (True, False), HANDS):
            out = self.apply(mode, armed, hand)
            if not armed and hand == "below":
                assert out.armed and out.mode is mode
            elif armed and hand == "above":
                expected = (TffMode.ACTIVE if mode is TffMode.INACTIVE
                            else TffMode.INACTIVE)
                assert out.mode is expected and not out.armed
            else:
                assert out.mode is mode and out.armed == armed

    def test_armed_false_immediately_after_any_accepted_gesture(self):
        for mode in TffMode:
            out = self.apply(mode, True, "above")
            assert not out.armed

    def test_rearm_raise_toggles_exactly_once(self):
        # from any reachable state, (below, above) toggles mode exactly once
        for mode, armed in itertools.product(TffMode, (True, False)):
            state = TffState(mode=mode, armed=armed)
            state = tff_update_mode(state, obs(hand="below"))
            out = tff_update_mode(state, obs(hand="above"))
            assert out.mode is not mode

    def test_repeated_raise_toggles_at_most_once(self):
        for mode, armed in itertools.product(TffMode, (True, False)):
            state = TffState(mode=mode, armed=armed)
            toggles = 0
            prev = state.mode
            for _ in range(5):
                state = tff_update_mode(state, obs(hand="above"))
                if state.mode is not prev:
                    toggles += 1
                    prev = state.mode
            assert toggles <= 1


class TestLongitudinalPid:
    def test_zero_error_zero_command(self):
        state = TffState(mode=TffMode.ACTIVE, armed=False)
        cfg = TffConfig(follow_distance=5.0)
        v_cmd, _ = tff_longitudinal(state, obs(rel=(5.0, 0.0)), cfg, DT)
        assert v_cmd == 0.0

    def test_proportional_hand_value(self):
        # Kp=0.5, Ki=Kd=0, distance 9, d_set 5 -> 0.5 * 4 = 2.0
        state = TffState(mode=TffMode.ACTIVE, armed=False, pid_prev_error=4.0)
        cfg = TffConfig(follow_distance=5.0, kp=0.5, ki=0.0, kd=0.0)
        v_cmd, _ = tff_longitudinal(state, obs(rel=(9.0, 0.0)), cfg, DT)
        assert v_cmd == pytest.approx(2.0)

    def test_too_close_clamps_to_zero_and_integral_clamps(self):
        # persistent e = -2: command floors at 0, integral at -clamp
        cfg = TffConfig(follow_distance=5.0)
        state = TffState(mode=TffMode.ACTIVE, armed=False)
        for _ in range(int(2 * cfg.integral_clamp / (2 * DT)) + 100):
            v_cmd, state = tff_longitudinal(state, obs(rel=(3.0, 0.0)), cfg, DT)
        assert v_cmd == 0.0
        assert state.pid_integral == pytest.approx(-cfg.integral_clamp)

    def test_scalar_pid_reference(self):
        # independent scalar PID recursion over a random error sequence
        cfg = TffConfig(follow_distance=5.0, kp=0.8, ki=0.2, kd=0.1,
                        integral_clamp=3.0)
        rng = np.random.default_rng(8)
        distances = 5.0 + rng.uniform(-3, 5, 200)
        state = TffState(mode=TffMode.ACTIVE, armed=False)
        integral, prev_e = 0.0, None
        for d in distances:
            v_cmd, state = tff_longitudinal(state, obs(rel=(float(d), 0.0)), cfg, DT)
            e = d - 5.0
            integral = min(max(integral + e * DT, -3.0), 3.0)
            de = 0.0 if prev_e is None else (e - prev_e) / DT
            want = min(max(cfg.kp * e + cfg.ki * integral + cfg.kd * de, 0.0), 3.0)
            prev_e = e
            assert v_cmd == pytest.approx(want, abs=1e-12)

    def test_anti_windup_bound_random_sequences(self):
        cfg = TffConfig()
        rng = np.random.default_rng(9)
        state = TffState(mode=TffMode.ACTIVE, armed=False)
        for d in rng.uniform(0.1, 60.0, 5000):
            _, state = tff_longitudinal(state, obs(rel=(float(d), 0.0)), cfg, DT)
            assert abs(state.pid_integral) <= cfg.integral_clamp

    def test_inactive_forces_zero_and_clears_memory(self):
        state = TffState(mode=TffMode.INACTIVE, armed=False,
                         pid_integral=4.0, pid_prev_error=2.0)
        v_cmd, out = tff_longitudinal(state, obs(rel=(9.0, 0.0)), TffConfig(), DT)
        assert v_cmd == 0.0
        assert out.pid_integral == 0.0 and out.pid_prev_error is None


class TestLateral:
    def test_dead_ahead(self):
        assert tff_lateral(obs(rel=(10.0, 0.0)), TffConfig(), PARAMS) == 0.0

    def test_saturates_at_limit(self):
        # 1.2 * pi/4 = 0.9425 > 0.6
        steer = tff_lateral(obs(rel=(10.0, 10.0)), TffConfig(steer_gain=1.2), PARAMS)
        assert steer == pytest.approx(0.6)

    def test_hand_value_right(self):
        steer = tff_lateral(obs(rel=(10.0, -1.0)), TffConfig(steer_gain=1.2), PARAMS)
        assert steer == pytest.approx(1.2 * math.atan2(-1, 10), abs=1e-9)
        assert steer == pytest.approx(-0.1197, abs=2e-4)

    def test_sign_matches_bearing_when_unsaturated(self):
        rng = np.random.default_rng(10)
        cfg = TffConfig(steer_gain=1.2)
        for _ in range(500):
            rel = (float(rng.uniform(1, 30)), float(rng.uniform(-10, 10)))
            steer = tff_lateral(obs(rel=rel), cfg, PARAMS)
            bearing = math.atan2(rel[1], rel[0])
            if abs(steer) < PARAMS.steer_limit - 1e-9:
                assert math.copysign(1, steer) == math.copysign(1, bearing) or steer == 0


class TestAct:
    def test_equilibrium(self):
        cur = VehicleState(speed=1.5, steer_angle=0.2)
        accel, steer = act(1.5, 0.2, cur, PARAMS, None, DT)
        assert accel == 0.0 and steer == 0.2

    def test_override_full_stop(self):
        cur = VehicleState(speed=2.0, steer_angle=0.1)
        ov = full_stop_override(cur, PARAMS)
        accel, steer = act(3.0, 0.5, cur, PARAMS, ov, DT)
        assert accel == -PARAMS.decel_limit
        assert steer == pytest.approx(0.1)

    def test_override_released_at_standstill(self):
        cur = VehicleState(speed=0.0)
        ov = full_stop_override(cur, PARAMS)
        accel, _ = act(0.0, 0.0, cur, PARAMS, ov, DT)
        assert accel == 0.0

    def test_steer_slew_per_tick(self):
        # 0.7 rad/s at 90 Hz -> 0.00778 rad per tick
        cur = VehicleState(speed=1.0, steer_angle=0.0)
        _, steer = act(1.0, 0.6, cur, PARAMS, None, DT)
        assert steer == pytest.approx(0.7 / 90.0)
        assert steer == pytest.approx(0.00778, abs=1e-5)

    def test_limits_hold_for_random_commands(self):
        rng = np.random.default_rng(11)
        cur = VehicleState()
        for _ in range(2000):
            v_cmd = float(rng.uniform(-5, 8))
            steer_cmd = float(rng.uniform(-2, 2))
            accel, steer = act(v_cmd, steer_cmd, cur, PARAMS, None, DT)
            assert -PARAMS.decel_limit <= accel <= PARAMS.accel_limit
            assert abs(steer) <= PARAMS.steer_limit
            assert abs(steer - cur.steer_angle) <= PARAMS.steer_rate_limit * DT + 1e-12
            cur = vehicle_dynamics_step(cur, accel, steer, PARAMS, DT)


class TestDynamics:
    def test_straight_advance(self):
        state = VehicleState(pose=Pose2(0, 0, 0), speed=1.0)
        out = vehicle_dynamics_step(state, 0.0, 0.0, PARAMS, DT)
        assert out.pose.x == pytest.approx(DT)
        assert out.pose.y == 0.0 and out.pose.heading == 0.0

    def test_zero_speed_pose_fixed(self):
        state = VehicleState(pose=Pose2(2, 3, 0.5), speed=0.0)
        out = vehicle_dynamics_step(state, 0.0, 0.4, PARAMS, DT)
        assert out.pose == state.pose

    def test_constant_accel_ramp(self):
        state = VehicleState()
        for _ in range(90):
            state = vehicle_dynamics_step(state, 1.0, 0.0, PARAMS, DT)
        assert state.speed == pytest.approx(1.0, abs=1e-9)

    def test_speed_clamped_to_vmax(self):
        state = VehicleState(speed=PARAMS.v_max)
        out = vehicle_dynamics_step(state, 1.0, 0.0, PARAMS, DT)
        assert out.speed == PARAMS.v_max

    def test_circle_radius_closed_form(self):
        # R = L / tan(delta) = 2.8 / tan(0.2) = 13.8137, fit over one lap
        from cvil.analysis import fit_circle

        delta, v = 0.2, 1.25
        R = 2.8 / math.tan(delta)
        assert R == pytest.approx(13.8137, abs=1e-3)
        state = VehicleState(pose=Pose2(0, 0, 0), speed=v)
        pts = []
        for _ in range(int(2 * math.pi * R / v / DT)):
            state = vehicle_dynamics_step(state, 0.0, delta, PARAMS, DT)
            pts.append((state.pose.x, state.pose.y))
        _, _, r = fit_circle(np.array(pts))
        assert abs(r - R) / R < 0.01


class TestSense:
    CFG = PerceptionConfig(position_noise_sigma=0.0, seed=0)

    def test_dead_ahead(self):
        w = world_with(Pose2(10, 0, 0))
        o = sense(w, self.CFG, np.random.default_rng(0))
        assert o.valid
        assert o.relative_position == pytest.approx((10.0, 0.0))

    def test_behind_not_detected(self):
        w = world_with(Pose2(-10, 0, 0))
        o = sense(w, self.CFG, np.random.default_rng(0))
        assert not o.valid

    def test_beyond_range_not_detected(self):
        w = world_with(Pose2(self.CFG.max_range + 1.0, 0, 0))
        o = sense(w, self.CFG, np.random.default_rng(0))
        assert not o.valid

    def test_fov_boundary_inclusive(self):
        # brute-force bearing sweep in 0.001-rad steps: the inclusion
        # boundary sits at fov_half_angle, boundary itself included
        rng = np.random.default_rng(0)
        half = self.CFG.fov_half_angle
        last_valid = None
        first_invalid = None
        for i in range(0, 1000):
            bearing = i * 0.001
            w = world_with(Pose2(10 * math.cos(bearing), 10 * math.sin(bearing), 0))
            o = sense(w, self.CFG, rng)
            if o.valid:
                last_valid = bearing
            elif first_invalid is None:
                first_invalid = bearing
        assert last_valid is not None and first_invalid is not None
        assert last_valid <= half + 1e-9
        assert first_invalid > half
        assert first_invalid - last_valid == pytest.approx(0.001, abs=1e-9)
        # exact boundary included
        w = world_with(Pose2(10 * math.cos(half), 10 * math.sin(half), 0))
        assert sense(w, self.CFG, rng).valid

    def test_hand_predicates_copied_exactly(self):
        rng = np.random.default_rng(0)
        for hand, above, below in ((HandHeight.ABOVE_HEAD, True, False),
                                   (HandHeight.BETWEEN, False, False),
                                   (HandHeight.BELOW_SHOULDER, False, True)):
            w = world_with(Pose2(10, 0, 0), hand=hand)
            o = sense(w, self.CFG, rng)
            assert (o.hand_above_head, o.hand_below_shoulder) == (above, below)
            assert not (o.hand_above_head and o.hand_below_shoulder)

    def test_noise_statistics(self):
        cfg = PerceptionConfig(position_noise_sigma=0.25, seed=0)
        rng = np.random.default_rng(123)
        w = world_with(Pose2(10, 0, 0))
        xs = []
        for _ in range(4000):
            o = sense(w, cfg, rng)
            xs.append(o.relative_position[0] - 10.0)
        assert abs(float(np.std(xs)) - 0.25) / 0.25 < 0.05
        assert abs(float(np.mean(xs))) < 0.02


class TestStopOverrideFactory:
    def test_override_engages_after_deadline(self):
        from cvil.core import SimClock, WorldSnapshot
        from cvil.vehicle import stop_override_after

        fn = stop_override_after(2.0, PARAMS)
        early = WorldSnapshot(clock=SimClock(90, 90.0),
                              vehicle=VehicleState(speed=1.0))
        late = WorldSnapshot(clock=SimClock(270, 90.0),
                             vehicle=VehicleState(speed=1.0))
        assert fn(early) is None
        ov = fn(late)
        assert ov is not None and ov.accel_cmd == -PARAMS.decel_limit


class TestTrackAndFollowPolicy:
    def make_world(self, tick, cyclist_pose, vehicle_speed=0.0,
                   hand=HandHeight.BETWEEN):
        return WorldSnapshot(
            clock=SimClock(tick, 90.0),
            vehicle=VehicleState(pose=Pose2(0, 0, 0), speed=vehicle_speed),
            cyclist=CyclistState(pose=cyclist_pose, hand_height=hand))

    def activated_controller(self):
        from cvil.vehicle import TrackAndFollow

        tf = TrackAndFollow(perception=PerceptionConfig(
            sample_rate=90.0, position_noise_sigma=0.0, seed=0))
        tf(self.make_world(0, Pose2(10, 0, 0), hand=HandHeight.ABOVE_HEAD))
        assert tf.state.mode is TffMode.ACTIVE
        return tf

    def test_detection_loss_holds_then_ramps_to_stop(self):
        tf = self.activated_controller()
        cmd = tf(self.make_world(1, Pose2(12, 0, 0), vehicle_speed=1.0))
        assert cmd.accel_cmd > 0  # following, wants to close a 7 m error
        # cyclist disappears behind the vehicle: hold the last command 0.5 s
        for tick in range(2, 2 + 44):
            cmd = tf(self.make_world(tick, Pose2(-15, 0, 0), vehicle_speed=1.0))
            assert cmd.accel_cmd > 0
        # past the hold window: fail-safe ramp at the deceleration limit
        for tick in range(46, 60):
            cmd = tf(self.make_world(tick, Pose2(-15, 0, 0), vehicle_speed=1.0))
        assert cmd.accel_cmd == -PARAMS.decel_limit
        assert tf.state.mode is TffMode.ACTIVE  # stays armed to re-acquire

    def test_reacquisition_resumes_following(self):
        tf = self.activated_controller()
        for tick in range(1, 120):
            tf(self.make_world(tick, Pose2(-15, 0, 0), vehicle_speed=1.0))
        cmd = tf(self.make_world(120, Pose2(12, 0, 0), vehicle_speed=0.5))
        assert cmd.accel_cmd > 0

    def test_detection_latency_channel_delays_activation(self):
        from cvil.protocol import ChannelCondition
        from cvil.vehicle import TrackAndFollow

        tf = TrackAndFollow(perception=PerceptionConfig(
            sample_rate=90.0, position_noise_sigma=0.0,
            detection_latency=ChannelCondition(delay_ms=200.0), seed=0))
        flipped_at = None
        for tick in range(0, 40):
            tf(self.make_world(tick, Pose2(10, 0, 0),
                               hand=HandHeight.ABOVE_HEAD))
            if flipped_at is None and tf.state.mode is TffMode.ACTIVE:
                flipped_at = tick
        # 200 ms at 90 Hz = 18 ticks before the first observation lands
        assert flipped_at is not None
        assert flipped_at == 18

    def test_trace_rows_schema(self):
        tf = self.activated_controller()
        row = tf.trace[-1]
        assert {"tick", "mode", "armed", "e", "v_cmd", "steer_cmd"} <= set(row)
