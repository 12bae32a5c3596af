"""Tests for the Euler-Maruyama integrator."""

import numpy as np
import pytest

from taylorflow.ensemble import ParticleEnsemble, read_jsonl, sample_prior
from taylorflow.errors import ConfigError, DomainError, IndefiniteMatrixError, NonFiniteStateError
from taylorflow.flows import FlowEval, FlowField, FlowKind, GaussianPrior
from taylorflow.integrator import FlowConfig, flow_update, lambda_grid, substep_count, transport
from taylorflow.models import AffineModel


class ConstantFlow(FlowField):
    """Same drift and diffusion everywhere."""

    name = "constant"

    def __init__(self, prior, model, drift, diffusion=None):
        super().__init__(prior, model)
        self.drift = np.asarray(drift, dtype=float)
        n = len(self.drift)
        self.q = np.zeros((n, n)) if diffusion is None else np.asarray(diffusion, dtype=float)

    def evaluate(self, x, lam, *, diffusion=True):
        if not diffusion:
            return FlowEval.drift_only(self.drift)
        return FlowEval(self.drift, self.q)


class HalfPlaneFlow(ConstantFlow):
    """Fails for particles with a positive first coordinate."""

    name = "half-plane"

    def evaluate(self, x, lam, *, diffusion=True):
        if x[0] > 0:
            raise DomainError("outside the domain")
        return super().evaluate(x, lam, diffusion=diffusion)


class BrokenPrepFlow(ConstantFlow):
    """Step preparation always fails."""

    name = "broken"

    def begin_step(self, lam):
        raise IndefiniteMatrixError("no step")


@pytest.fixture
def prior():
    return GaussianPrior([0.0, 0.0], np.eye(2))


@pytest.fixture
def model():
    return AffineModel(R=np.eye(2), y_obs=[0.0, 0.0], H=np.eye(2))


class TestLambdaGrid:
    """Tests for the pseudo-time grid."""

    def test_uniform(self):
        """1/50 should give 51 points from 0 to 1."""
        grid = lambda_grid(1.0 / 50)
        assert len(grid) == 51
        assert grid[0] == 0.0
        assert grid[-1] == 1.0
        np.testing.assert_allclose(np.diff(grid), 0.02)

    def test_short_last_step(self):
        """A step that does not divide 1 should shorten the last step."""
        np.testing.assert_allclose(lambda_grid(0.3), [0.0, 0.3, 0.6, 0.9, 1.0])

    def test_single_step(self):
        """dlambda = 1 should give one step."""
        np.testing.assert_array_equal(lambda_grid(1.0), [0.0, 1.0])


class TestFlowConfig:
    """Tests for FlowConfig validation."""

    def test_defaults(self):
        """Defaults should be 50 steps with diffusion and shared noise."""
        cfg = FlowConfig()
        assert cfg.steps == 50
        assert cfg.diffusion is True
        assert cfg.shared_noise is True
        assert cfg.workers == 1

    @pytest.mark.parametrize("dlambda", [0.0, -0.1, 1.5, float("nan")])
    def test_bad_dlambda(self, dlambda):
        """dlambda outside (0, 1] should raise ConfigError."""
        with pytest.raises(ConfigError):
            FlowConfig(dlambda=dlambda)

    def test_bad_workers(self):
        """workers must be a positive integer."""
        with pytest.raises(ConfigError):
            FlowConfig(workers=0)

    @pytest.mark.parametrize("substeps", [0, -3, 1.5])
    def test_bad_substeps(self, substeps):
        """substeps must be a positive integer."""
        with pytest.raises(ConfigError, match="substeps"):
            FlowConfig(substeps=substeps)


class TestTransport:
    """Tests for transport with synthetic fields."""

    def test_zero_field_returns_input(self, prior, model):
        """One particle, no diffusion, f = 0 should not move."""
        e = ParticleEnsemble(np.array([[0.3, -0.7]]))
        final, traj = transport(e, ConstantFlow(prior, model, [0.0, 0.0]), FlowConfig(diffusion=False))
        assert final == e
        assert traj.totals() == {"steps": 50, "clamps": 0, "frozen": 0, "diffusion_failures": 0}

    def test_constant_drift_integrates_exactly(self, prior, model):
        """A constant drift should move particles by exactly that drift over [0, 1]."""
        e = ParticleEnsemble(np.zeros((3, 2)))
        final, _ = transport(e, ConstantFlow(prior, model, [1.0, -2.0]), FlowConfig(dlambda=0.3))
        np.testing.assert_allclose(final.states, np.tile([1.0, -2.0], (3, 1)), atol=1e-12)

    def test_noise_has_expected_spread(self, prior, model):
        """Constant Q = I should give unit variance at lambda = 1."""
        e = ParticleEnsemble(np.zeros((4000, 2)))
        flow = ConstantFlow(prior, model, [0.0, 0.0], np.eye(2))
        final, _ = transport(e, flow, FlowConfig(dlambda=0.1, seed=4))
        np.testing.assert_allclose(np.cov(final.states, rowvar=False), np.eye(2), atol=0.08)

    def test_failed_particles_are_frozen(self, prior, model):
        """Particles whose field fails should stay in place and be counted."""
        e = ParticleEnsemble(np.array([[-1.0, 0.0], [1.0, 0.0]]))
        flow = HalfPlaneFlow(prior, model, [0.0, 1.0])
        final, traj = transport(e, flow, FlowConfig(dlambda=0.25, diffusion=False))
        np.testing.assert_allclose(final.states, [[-1.0, 1.0], [1.0, 0.0]])
        assert traj.frozen == 4
        assert [s.frozen for s in traj.steps] == [1, 1, 1, 1]

    def test_failed_preparation_freezes_ensemble(self, prior, model):
        """A failed step preparation should hold every particle."""
        e = ParticleEnsemble(np.array([[0.0, 0.0], [1.0, 1.0]]))
        final, traj = transport(e, BrokenPrepFlow(prior, model, [1.0, 1.0]), FlowConfig(dlambda=0.5))
        assert final == e
        assert traj.frozen == 4

    def test_indefinite_diffusion_freezes_particle(self, prior, model):
        """An indefinite Q should freeze the particle and count a diffusion failure."""
        e = ParticleEnsemble(np.zeros((2, 2)))
        flow = ConstantFlow(prior, model, [1.0, 0.0], np.diag([1.0, -1.0]))
        final, traj = transport(e, flow, FlowConfig(dlambda=0.5))
        assert final == e
        assert traj.diffusion_failures == 4
        assert traj.frozen == 4

    def test_clamps_counted(self, prior, model):
        """A rank-one Q should clamp one pivot per particle and step."""
        e = ParticleEnsemble(np.zeros((3, 2)))
        flow = ConstantFlow(prior, model, [0.0, 0.0], np.ones((2, 2)))
        _, traj = transport(e, flow, FlowConfig(dlambda=0.25))
        assert traj.clamps == 12
        assert traj.diffusion_failures == 0

    def test_non_finite_state_raises(self, prior, model):
        """An infinite drift should raise NonFiniteStateError with the particle index."""
        e = ParticleEnsemble(np.zeros((2, 2)))
        with pytest.raises(NonFiniteStateError) as exc_info:
            transport(e, ConstantFlow(prior, model, [np.inf, 0.0]), FlowConfig(diffusion=False))
        assert exc_info.value.particle == 0
        assert exc_info.value.lam == 0.0

    def test_recorded_trajectory(self, prior, model, tmp_path):
        """Recording should keep K+1 snapshots and write one JSONL line each."""
        e = ParticleEnsemble(np.zeros((2, 2)))
        cfg = FlowConfig(dlambda=0.25, record_trajectories=True)
        _, traj = transport(e, ConstantFlow(prior, model, [1.0, 0.0]), cfg)
        assert len(traj.snapshots) == 5
        np.testing.assert_allclose(traj.snapshots[2], [[0.5, 0.0], [0.5, 0.0]])
        path = tmp_path / "trajectory.jsonl"
        traj.write_jsonl(path)
        records = read_jsonl(path)
        assert [r["lambda"] for r in records] == [0.0, 0.25, 0.5, 0.75, 1.0]
        assert records[0]["diagnostics"] == {}
        assert records[1]["diagnostics"]["step"] == 0

    def test_not_recorded_by_default(self, prior, model):
        """Without recording there should be no snapshots."""
        _, traj = transport(ParticleEnsemble(np.zeros((1, 2))), ConstantFlow(prior, model, [0.0, 0.0]), FlowConfig())
        assert traj.snapshots == []


class TestFlowUpdate:
    """Tests for flow_update with registered flows."""

    def test_dimension_mismatch(self, range_scenario):
        """An ensemble of the wrong dimension should raise ConfigError."""
        s = range_scenario
        with pytest.raises(ConfigError, match="dimension"):
            flow_update(ParticleEnsemble(np.zeros((2, 3))), FlowKind("gromov"), s.prior, s.model, FlowConfig())

    def test_same_seed_is_deterministic(self, range_scenario):
        """Two runs with one seed should be bitwise identical."""
        s = range_scenario
        e = sample_prior(s.prior, 20, 1)
        cfg = FlowConfig(seed=9, dlambda=0.1)
        a, _ = flow_update(e, FlowKind("gromov"), s.prior, s.model, cfg)
        b, _ = flow_update(e, FlowKind("gromov"), s.prior, s.model, cfg)
        np.testing.assert_array_equal(a.states, b.states)

    def test_workers_do_not_change_results(self, range_scenario):
        """Thread count should not change the output."""
        s = range_scenario
        e = sample_prior(s.prior, 16, 2)
        kind = FlowKind("dapff-v2", 2)
        single, _ = flow_update(e, kind, s.prior, s.model, FlowConfig(dlambda=0.1, workers=1))
        multi, _ = flow_update(e, kind, s.prior, s.model, FlowConfig(dlambda=0.1, workers=4))
        np.testing.assert_array_equal(single.states, multi.states)

    def test_shared_noise_links_flows(self, range_scenario):
        """DAPFFv2-1 and Gromov should coincide under shared noise and differ without it."""
        s = range_scenario
        e = sample_prior(s.prior, 10, 3)
        shared = FlowConfig(dlambda=0.1, seed=5)
        g, _ = flow_update(e, FlowKind("gromov"), s.prior, s.model, shared)
        v, _ = flow_update(e, FlowKind("dapff-v2", 1), s.prior, s.model, shared)
        np.testing.assert_array_equal(v.states, g.states)

        split = FlowConfig(dlambda=0.1, seed=5, shared_noise=False)
        g2, _ = flow_update(e, FlowKind("gromov"), s.prior, s.model, split)
        v2, _ = flow_update(e, FlowKind("dapff-v2", 1), s.prior, s.model, split)
        assert not np.allclose(v2.states, g2.states)

    def test_exact_flow_ignores_diffusion_flag(self, affine_scenario):
        """The exact flow has no noise, so the diffusion flag should not matter."""
        s = affine_scenario
        e = sample_prior(s.prior, 10, 0)
        on, traj = flow_update(e, FlowKind("exact"), s.prior, s.model, FlowConfig(dlambda=0.1))
        off, _ = flow_update(e, FlowKind("exact"), s.prior, s.model, FlowConfig(dlambda=0.1, diffusion=False))
        np.testing.assert_array_equal(on.states, off.states)
        assert traj.clamps == 0

    def test_range_drift_only_moves_toward_ring(self, range_scenario):
        """DAPFFv1 drift-only should reduce the range residual."""
        s = range_scenario
        e = sample_prior(s.prior, 50, 0)
        final, _ = flow_update(e, FlowKind("dapff-v1", 4), s.prior, s.model, FlowConfig(diffusion=False))
        before = np.mean(np.abs(np.linalg.norm(e.states, axis=1) - 1.0))
        after = np.mean(np.abs(np.linalg.norm(final.states, axis=1) - 1.0))
        assert after < before


class TestSubsteps:
    """Tests for the graded sub-step schedule."""

    def test_default_is_plain_grid(self):
        """FlowConfig defaults to one sub-step per reporting step."""
        assert FlowConfig().substep_schedule() == [1] * 50

    def test_schedule_for_twenty(self):
        """20 sub-steps on a 1/50 grid should halve with each early step and reach one."""
        schedule = FlowConfig(dlambda=1.0 / 50, substeps=20).substep_schedule()
        assert schedule[:5] == [20, 10, 7, 5, 4]
        assert schedule[19:] == [1] * 31
        assert sum(schedule) == 110

    def test_count_matches_uniform_formula(self):
        """On a uniform grid step k gets ceil(substeps / (k + 1)) pieces."""
        for k in range(30):
            assert substep_count(k * 0.01, 0.01, 12) == max(1, -(-12 // (k + 1)))

    def test_short_last_step(self):
        """A shortened last step still gets at least one piece."""
        assert FlowConfig(dlambda=0.3, substeps=4).substep_schedule() == [4, 2, 2, 1]

    def test_constant_drift_still_exact(self, prior, model):
        """Sub-steps should not change the integral of a constant drift."""
        e = ParticleEnsemble(np.zeros((2, 2)))
        cfg = FlowConfig(dlambda=0.25, substeps=7, diffusion=False)
        final, traj = transport(e, ConstantFlow(prior, model, [1.0, -2.0]), cfg)
        np.testing.assert_allclose(final.states, np.tile([1.0, -2.0], (2, 1)), atol=1e-12)
        assert [s.substeps for s in traj.steps] == [7, 4, 3, 2]
        assert len(traj.steps) == 4

    def test_diagnostics_accumulate_over_substeps(self, prior, model):
        """Counters should add up every sub-step inside a reporting step."""
        e = ParticleEnsemble(np.zeros((3, 2)))
        flow = ConstantFlow(prior, model, [0.0, 0.0], np.ones((2, 2)))
        _, traj = transport(e, flow, FlowConfig(dlambda=0.5, substeps=4))
        # schedule [4, 2]; one clamp per particle per sub-step
        assert [s.clamps for s in traj.steps] == [12, 6]

        frozen, failing = transport(
            e, BrokenPrepFlow(prior, model, [1.0, 1.0]), FlowConfig(dlambda=0.5, substeps=4)
        )
        assert frozen == e
        assert failing.frozen == 18

    def test_noise_spread_unchanged(self, prior, model):
        """Constant Q = I should still give unit variance at lambda = 1."""
        e = ParticleEnsemble(np.zeros((4000, 2)))
        flow = ConstantFlow(prior, model, [0.0, 0.0], np.eye(2))
        final, _ = transport(e, flow, FlowConfig(dlambda=0.1, seed=4, substeps=5))
        np.testing.assert_allclose(np.cov(final.states, rowvar=False), np.eye(2), atol=0.08)

    def test_noise_keyed_by_substep(self, prior, model):
        """A grid of 1/4 with four first-step pieces draws the same noise as a 1/16 grid
        over its first quarter."""
        e = ParticleEnsemble(np.zeros((5, 2)))
        flow = ConstantFlow(prior, model, [0.0, 0.0], np.eye(2))
        coarse = FlowConfig(dlambda=0.25, seed=3, substeps=4, record_trajectories=True)
        fine = FlowConfig(dlambda=1.0 / 16, seed=3, record_trajectories=True)
        _, a = transport(e, flow, coarse)
        _, b = transport(e, flow, fine)
        np.testing.assert_allclose(a.snapshots[1], b.snapshots[4], atol=1e-12)

    def test_stiff_range_drift_stays_finite(self, range_scenario):
        """Drift-only DAPFFv1-8 on the range scenario at 1/50 should stay finite with
        the scenario's sub-steps and land near the ring."""
        s = range_scenario
        e = sample_prior(s.prior, 40, 0)
        cfg = FlowConfig(dlambda=1.0 / 50, diffusion=False, substeps=s.defaults.substeps)
        final, traj = flow_update(e, FlowKind("dapff-v1", 8), s.prior, s.model, cfg)
        assert np.all(np.isfinite(final.states))
        assert traj.frozen == 0
        residual = np.mean(np.abs(np.linalg.norm(final.states, axis=1) - 1.0))
        assert residual < 0.3


class TestConvergence:
    """Euler error should shrink with the step."""

    def test_halving_dlambda_halves_the_gap(self, affine_scenario):
        """The median particle gap between 1/50 and 1/100 runs should be below the gap
        between 1/25 and 1/50 runs."""
        s = affine_scenario
        e = sample_prior(s.prior, 200, 6)
        finals = {}
        for steps in (25, 50, 100):
            cfg = FlowConfig(dlambda=1.0 / steps, diffusion=False)
            finals[steps], _ = flow_update(e, FlowKind("gromov"), s.prior, s.model, cfg)

        def gap(a, b):
            return np.median(np.linalg.norm(finals[a].states - finals[b].states, axis=1))

        coarse, fine = gap(25, 50), gap(50, 100)
        assert fine < coarse
        # first-order scheme: roughly half
        assert fine < 0.7 * coarse
