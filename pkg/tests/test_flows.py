"""Tests for the flow fields, flow kinds and the flow registry."""

import numpy as np
import pytest

from taylorflow.errors import (
    ConfigError,
    DomainError,
    IndefiniteMatrixError,
    InvalidOrderError,
)
from taylorflow.flows import (
    FLOW_REGISTRY,
    FlowEval,
    FlowKind,
    GaussianPrior,
    create_flow,
    exact_field,
    get_flow_info,
    gromov_field,
    v1_field,
    v1_prepare,
    v2_field,
)
from taylorflow.flows.dapff_v1 import DapffV1Flow
from taylorflow.flows.dapff_v2 import DapffV2Flow
from taylorflow.flows.exact import ExactFlow, exact_coefficients
from taylorflow.flows.gromov import GromovFlow
from taylorflow.models import AffineModel, RangeModel

LAMBDAS = [0.0, 0.25, 0.5, 1.0]


def _assert_rel_close(actual, expected, rtol=1e-9):
    scale = max(1.0, float(np.max(np.abs(expected))))
    np.testing.assert_allclose(actual, expected, rtol=0, atol=rtol * scale)


def _random_states(prior: GaussianPrior, count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.multivariate_normal(prior.mean, prior.cov, size=count)


class TestGaussianPrior:
    """Tests for GaussianPrior."""

    def test_precision(self):
        """precision should be the inverse covariance."""
        prior = GaussianPrior([-3.5, 0.0], [[1.0, 0.5], [0.5, 1.0]])
        np.testing.assert_allclose(prior.precision, [[4 / 3, -2 / 3], [-2 / 3, 4 / 3]])
        assert prior.dim == 2

    def test_non_pd_rejected(self):
        """A covariance that is not PD should raise ConfigError."""
        with pytest.raises(ConfigError, match="positive definite"):
            GaussianPrior([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])

    def test_shape_mismatch_rejected(self):
        """Mean and covariance sizes must agree."""
        with pytest.raises(ConfigError):
            GaussianPrior([0.0, 0.0, 0.0], np.eye(2))

    def test_from_ensemble(self):
        """from_ensemble should use the sample mean and N-1 covariance."""
        states = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
        prior = GaussianPrior.from_ensemble(states)
        np.testing.assert_allclose(prior.mean, [1.0, 1.0])
        np.testing.assert_allclose(prior.cov, np.eye(2) * 4 / 3)

    def test_from_ensemble_keeps_given_mean(self):
        """Passing a mean should keep it while re-estimating the covariance."""
        states = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
        prior = GaussianPrior.from_ensemble(states, mean=np.array([5.0, 5.0]))
        np.testing.assert_allclose(prior.mean, [5.0, 5.0])

    def test_equality_and_hash(self):
        """Equal priors should compare and hash equal."""
        a = GaussianPrior([1.0, 2.0], np.eye(2))
        b = GaussianPrior(np.array([1.0, 2.0]), np.eye(2))
        assert a == b
        assert hash(a) == hash(b)


class TestFlowKind:
    """Tests for FlowKind parsing and validation."""

    def test_parse_with_order(self):
        """'dapff-v1:8' should parse to name and order."""
        kind = FlowKind.parse("dapff-v1:8")
        assert kind == FlowKind("dapff-v1", 8)
        assert kind.label == "dapff-v1-8"

    def test_parse_fills_default_order(self):
        """A DA flow without an order should get its default."""
        assert FlowKind.parse("dapff-v2").order == 3
        assert FlowKind.parse("dapff-v1").order == 8

    def test_of_drops_order_for_linearized_flows(self):
        """of() should drop an order the flow cannot use."""
        assert FlowKind.of("gromov", 5) == FlowKind("gromov")
        assert str(FlowKind.of("exact")) == "exact"

    def test_unknown_flow(self):
        """Unknown names should raise ConfigError."""
        with pytest.raises(ConfigError, match="Unknown flow"):
            FlowKind("ukf")

    @pytest.mark.parametrize(
        "name,order",
        [("dapff-v1", 1), ("dapff-v1", 0), ("dapff-v2", 4), ("dapff-v2", 0), ("gromov", 2)],
    )
    def test_invalid_orders(self, name, order):
        """Orders outside each flow's range should raise InvalidOrderError."""
        with pytest.raises(InvalidOrderError):
            FlowKind(name, order)

    def test_parse_bad_order(self):
        """A non-integer order in the text should raise ConfigError."""
        with pytest.raises(ConfigError):
            FlowKind.parse("dapff-v1:high")

    def test_invalid_order_is_config_error(self):
        """InvalidOrderError should be catchable as ConfigError."""
        with pytest.raises(ConfigError):
            FlowKind("dapff-v2", 5)


class TestFlowRegistry:
    """Tests for the lazy flow registry."""

    def test_registry_entries(self):
        """Registry should hold the four flows."""
        assert set(FLOW_REGISTRY) == {"exact", "gromov", "dapff-v1", "dapff-v2"}

    @pytest.mark.parametrize(
        "name,cls",
        [
            ("exact", ExactFlow),
            ("gromov", GromovFlow),
            ("dapff-v1", DapffV1Flow),
            ("dapff-v2", DapffV2Flow),
        ],
    )
    def test_create(self, range_scenario, name, cls):
        """create_flow should build the registered class."""
        flow = create_flow(FlowKind.of(name), range_scenario.prior, range_scenario.model)
        assert isinstance(flow, cls)
        assert flow.name == name

    def test_order_metadata(self):
        """DA flows should carry their order bounds."""
        v1, v2 = get_flow_info("dapff-v1"), get_flow_info("dapff-v2")
        assert (v1.min_order, v1.max_order, v1.default_order) == (2, None, 8)
        assert (v2.min_order, v2.max_order, v2.default_order) == (1, 3, 3)
        assert not get_flow_info("gromov").uses_order

    def test_unknown_name(self):
        """get_flow_info should raise ConfigError for unknown names."""
        with pytest.raises(ConfigError, match="Unknown flow"):
            get_flow_info("enkf")

    def test_create_rejects_bad_order(self, range_scenario):
        """FlowInfo.create should validate the order."""
        with pytest.raises(InvalidOrderError):
            get_flow_info("dapff-v2").create(range_scenario.prior, range_scenario.model, 7)

    def test_kind_property(self, range_scenario):
        """A flow should report its kind."""
        flow = get_flow_info("dapff-v2").create(range_scenario.prior, range_scenario.model, 2)
        assert flow.kind == FlowKind("dapff-v2", 2)


class TestGromovField:
    """Tests for the Gromov flow."""

    def test_range_scenario(self, range_scenario):
        """At (-3.5, 0) and lambda 0 the drift should be (250, 125)."""
        s = range_scenario
        out = gromov_field(np.array([-3.5, 0.0]), 0.0, s.prior, s.model)
        np.testing.assert_allclose(out.drift, [250.0, 125.0], rtol=1e-12)
        np.testing.assert_allclose(out.diffusion, 100.0 * np.array([[1.0, 0.5], [0.5, 0.25]]))

    def test_zero_innovation(self):
        """Linear h with h(mean) = y_obs should give zero drift at the mean."""
        prior = GaussianPrior([1.0, 2.0], np.eye(2))
        model = AffineModel(R=[[0.5]], y_obs=[3.0], H=[[1.0, 1.0]])
        out = gromov_field(prior.mean, 0.3, prior, model)
        np.testing.assert_allclose(out.drift, [0.0, 0.0], atol=1e-14)

    def test_diffusion_is_psd(self, range_scenario):
        """Q should be symmetric PSD at any state and lambda."""
        s = range_scenario
        for x in _random_states(s.prior, 10, 3):
            for lam in LAMBDAS:
                q = gromov_field(x, lam, s.prior, s.model).diffusion
                np.testing.assert_array_equal(q, q.T)
                assert np.linalg.eigvalsh(q).min() >= -1e-10

    def test_drift_only(self, range_scenario):
        """diffusion=False should return a zero diffusion matrix."""
        s = range_scenario
        out = gromov_field(np.array([-3.0, 0.5]), 0.5, s.prior, s.model, diffusion=False)
        assert not np.any(out.diffusion)

    def test_singular_point(self, range_scenario):
        """The range sensor location should fail with DomainError."""
        s = range_scenario
        with pytest.raises(DomainError):
            gromov_field(np.zeros(2), 0.0, s.prior, s.model)


class TestExactField:
    """Tests for the exact flow."""

    def test_range_scenario_coefficients(self, range_scenario):
        """At (-3.5, 0) and lambda 0, A should be [[-50, 0], [-25, 0]]."""
        s = range_scenario
        A, _ = exact_coefficients(np.array([-3.5, 0.0]), 0.0, s.prior, s.model)
        np.testing.assert_allclose(A, [[-50.0, 0.0], [-25.0, 0.0]], atol=1e-12)

    def test_uninformative_measurement(self):
        """R = 1e12 I should leave the drift at zero."""
        prior = GaussianPrior([0.5, -0.5], [[1.0, 0.2], [0.2, 2.0]])
        model = AffineModel(R=1e12 * np.eye(2), y_obs=[3.0, -1.0], H=np.eye(2))
        A, b = exact_coefficients(np.array([1.0, 1.0]), 0.5, prior, model)
        assert np.max(np.abs(A)) < 1e-9
        assert np.max(np.abs(b)) < 1e-9

    def test_zero_diffusion(self, affine_scenario):
        """Exact flow diffusion should always be zero."""
        s = affine_scenario
        out = exact_field(np.array([0.2, 0.1]), 0.5, s.prior, s.model, diffusion=True)
        assert not np.any(out.diffusion)
        assert ExactFlow.stochastic is False

    def test_mean_moves_to_kalman_mean(self, affine_scenario):
        """For affine h the mean trajectory should end at the Kalman mean."""
        from taylorflow.oracles import kalman_update

        s = affine_scenario
        x = s.prior.mean.copy()
        steps = 2000
        for k in range(steps):
            x = x + exact_field(x, k / steps, s.prior, s.model).drift / steps
        mean, _ = kalman_update(s)
        np.testing.assert_allclose(x, mean, atol=5e-3)


class TestDapffV1:
    """Tests for the DA flow expanded at the prior mean."""

    def test_prior_polynomial(self, range_scenario):
        """The prior poly should hold exactly the three quadratic monomials."""
        s = range_scenario
        uctx = v1_prepare(s.prior, s.model, 8)
        t = uctx.prior_poly
        assert set(t.coeffs) == {(2, 0), (1, 1), (0, 2)}
        assert t.coeff((2, 0)) == pytest.approx(-2 / 3)
        assert t.coeff((1, 1)) == pytest.approx(2 / 3)
        assert t.coeff((0, 2)) == pytest.approx(-2 / 3)

    def test_loglik_constant(self, range_scenario):
        """The log-likelihood constant term should be -312.5."""
        s = range_scenario
        uctx = v1_prepare(s.prior, s.model, 8)
        assert uctx.loglik.const == pytest.approx(-312.5)
        assert uctx.order == 8

    def test_linear_h_gives_quadratic_loglik(self, affine_scenario):
        """For affine h the log-likelihood should be exactly quadratic."""
        s = affine_scenario
        for order in (2, 5):
            assert v1_prepare(s.prior, s.model, order).loglik.degree() == 2

    def test_range_scenario_drift(self, range_scenario):
        """At dx = 0 and lambda 0 the drift should be (250, 125)."""
        s = range_scenario
        uctx = v1_prepare(s.prior, s.model, 8)
        out = v1_field(uctx, 0.0, np.zeros(2))
        np.testing.assert_allclose(out.drift, [250.0, 125.0], rtol=1e-12)

    def test_perfect_fit_gives_zero_drift(self):
        """A measurement that always equals y_obs should not move particles."""
        prior = GaussianPrior([0.0, 0.0], np.eye(2))
        model = AffineModel(R=[[1.0]], y_obs=[2.0], H=[[0.0, 0.0]], b=[2.0])
        uctx = v1_prepare(prior, model, 3)
        out = v1_field(uctx, 0.5, np.array([0.3, -0.2]))
        np.testing.assert_allclose(out.drift, [0.0, 0.0], atol=1e-14)

    def test_order_below_two_rejected(self, range_scenario):
        """Order 1 should raise InvalidOrderError."""
        with pytest.raises(InvalidOrderError):
            v1_prepare(range_scenario.prior, range_scenario.model, 1)

    def test_singular_expansion_center(self):
        """A prior mean at the range sensor should raise DomainError."""
        prior = GaussianPrior([0.0, 0.0], np.eye(2))
        with pytest.raises(DomainError):
            v1_prepare(prior, RangeModel(R=[[0.01]], y_obs=[1.0]), 4)

    def test_cache_per_lambda(self, range_scenario):
        """Polynomials should be reused for one lambda and rebuilt for the next."""
        s = range_scenario
        uctx = v1_prepare(s.prior, s.model, 4)
        first = uctx.polys_at(0.25)
        assert uctx.polys_at(0.25) is first
        second = uctx.polys_at(0.5)
        assert second is not first
        assert second.lam == 0.5

    def test_batch_matches_single(self, range_scenario):
        """Vectorized evaluation should equal per-particle evaluation."""
        s = range_scenario
        flow = DapffV1Flow(s.prior, s.model, 6)
        states = _random_states(s.prior, 8, 5)
        batch = flow.evaluate_batch(states, 0.4)
        assert not batch.failed.any()
        for i, x in enumerate(states):
            single = flow.evaluate(x, 0.4)
            np.testing.assert_allclose(batch.drift[i], single.drift, rtol=1e-12)
            np.testing.assert_allclose(batch.diffusion[i], single.diffusion, rtol=1e-12, atol=1e-12)

    def test_indefinite_hessian_fails_whole_batch(self):
        """A non-PD negated Hessian should fail every particle of the step."""
        prior = GaussianPrior([0.1, 0.0], np.eye(2))
        model = RangeModel(R=[[0.01]], y_obs=[1.0])
        flow = DapffV1Flow(prior, model, 4)
        with pytest.raises(IndefiniteMatrixError):
            flow.begin_step(1.0)
        batch = flow.evaluate_batch(np.array([[0.1, 0.0], [0.2, 0.1]]), 1.0)
        assert batch.failed.all()
        assert batch.errors

    def test_default_order(self, range_scenario):
        """The default order should be 8."""
        assert DapffV1Flow(range_scenario.prior, range_scenario.model).order == 8


class TestDapffV2:
    """Tests for the DA flow expanded at each particle."""

    def test_order_one_is_gromov(self, range_scenario):
        """Order 1 should reproduce the Gromov drift and diffusion bit for bit."""
        s = range_scenario
        for x in _random_states(s.prior, 10, 7):
            for lam in LAMBDAS:
                v2 = v2_field(x, lam, s.prior, s.model, 1)
                g = gromov_field(x, lam, s.prior, s.model)
                np.testing.assert_array_equal(v2.drift, g.drift)
                np.testing.assert_array_equal(v2.diffusion, g.diffusion)

    def test_drift_only_order_two_equals_three(self, range_scenario):
        """Drift-only, orders 2 and 3 should give the same drift."""
        s = range_scenario
        for x in _random_states(s.prior, 10, 8):
            for lam in LAMBDAS:
                d2 = v2_field(x, lam, s.prior, s.model, 2, diffusion=False).drift
                d3 = v2_field(x, lam, s.prior, s.model, 3, diffusion=False).drift
                _assert_rel_close(d2, d3)

    def test_order_three_differs_from_gromov(self, range_scenario):
        """Higher orders should add curvature the linearization lacks."""
        s = range_scenario
        x = np.array([-3.0, 1.0])
        v2 = v2_field(x, 0.5, s.prior, s.model, 3)
        g = gromov_field(x, 0.5, s.prior, s.model)
        assert not np.allclose(v2.drift, g.drift, rtol=1e-6)

    @pytest.mark.parametrize("order", [0, 4])
    def test_order_bounds(self, range_scenario, order):
        """Orders outside [1, 3] should raise InvalidOrderError."""
        s = range_scenario
        with pytest.raises(InvalidOrderError):
            v2_field(np.array([-3.0, 0.0]), 0.0, s.prior, s.model, order)

    def test_singular_particle_fails_alone(self, range_scenario):
        """A particle at the sensor should fail without failing the others."""
        s = range_scenario
        flow = DapffV2Flow(s.prior, s.model, 2)
        states = np.array([[-3.0, 0.0], [0.0, 0.0], [-2.5, 0.5]])
        batch = flow.evaluate_batch(states, 0.0)
        assert batch.failed.tolist() == [False, True, False]
        assert not np.any(batch.drift[1])
        assert len(batch.errors) == 1


class TestGromovLimit:
    """All DA flows should reduce to the Gromov flow for affine measurements."""

    @pytest.mark.parametrize("order", [2, 4])
    def test_v1_matches_gromov(self, affine_scenario, order):
        """DAPFFv1 drift and diffusion should match Gromov for affine h."""
        s = affine_scenario
        uctx = v1_prepare(s.prior, s.model, order)
        for x in _random_states(s.prior, 20, order):
            for lam in LAMBDAS:
                v1 = v1_field(uctx, lam, x - s.prior.mean)
                g = gromov_field(x, lam, s.prior, s.model)
                _assert_rel_close(v1.drift, g.drift)
                _assert_rel_close(v1.diffusion, g.diffusion)

    @pytest.mark.parametrize("order", [1, 2, 3])
    def test_v2_matches_gromov(self, affine_scenario, order):
        """DAPFFv2 drift and diffusion should match Gromov for affine h."""
        s = affine_scenario
        for x in _random_states(s.prior, 20, 10 + order):
            for lam in LAMBDAS:
                v2 = v2_field(x, lam, s.prior, s.model, order)
                g = gromov_field(x, lam, s.prior, s.model)
                _assert_rel_close(v2.drift, g.drift)
                _assert_rel_close(v2.diffusion, g.diffusion)


class TestBatchedFields:
    """Vectorized ensemble evaluation against one particle at a time."""

    @pytest.mark.parametrize(
        "kind",
        [
            FlowKind("exact"),
            FlowKind("gromov"),
            FlowKind("dapff-v2", 1),
            FlowKind("dapff-v2", 2),
            FlowKind("dapff-v2", 3),
        ],
    )
    @pytest.mark.parametrize("diffusion", [True, False])
    def test_batch_matches_single(self, range_scenario, kind, diffusion):
        """evaluate_batch should agree with evaluate on every particle."""
        s = range_scenario
        flow = create_flow(kind, s.prior, s.model)
        states = _random_states(s.prior, 12, 21)
        for lam in LAMBDAS:
            batch = flow.evaluate_batch(states, lam, diffusion=diffusion)
            assert not batch.failed.any()
            for i, x in enumerate(states):
                single = flow.evaluate(x, lam, diffusion=diffusion)
                _assert_rel_close(batch.drift[i], single.drift)
                if batch.diffusion is not None:
                    _assert_rel_close(batch.diffusion[i], single.diffusion)

    def test_first_order_batch_is_gromov_batch(self, range_scenario):
        """DAPFFv2-1 and Gromov should produce identical batches."""
        s = range_scenario
        states = _random_states(s.prior, 30, 22)
        g = GromovFlow(s.prior, s.model).evaluate_batch(states, 0.3)
        v = DapffV2Flow(s.prior, s.model, 1).evaluate_batch(states, 0.3)
        np.testing.assert_array_equal(v.drift, g.drift)
        np.testing.assert_array_equal(v.diffusion, g.diffusion)

    @pytest.mark.parametrize("cls", [ExactFlow, GromovFlow])
    def test_singular_particle_fails_alone(self, range_scenario, cls):
        """A particle at the sensor should fall back and fail on its own."""
        s = range_scenario
        flow = cls(s.prior, s.model)
        states = np.array([[-3.0, 0.0], [0.0, 0.0], [-2.5, 0.5]])
        batch = flow.evaluate_batch(states, 0.5)
        assert batch.failed.tolist() == [False, True, False]
        _assert_rel_close(batch.drift[2], flow.evaluate(states[2], 0.5).drift)

    def test_indefinite_hessian_marks_particle(self):
        """A particle with an indefinite posterior Hessian should be marked failed in the batch."""
        prior = GaussianPrior([0.0, 0.0], np.eye(2) * 100.0)
        model = RangeModel(R=[[1e-4]], y_obs=[5.0])
        flow = DapffV2Flow(prior, model, 2)
        states = np.array([[0.5, 0.0], [6.0, 0.0]])
        batch = flow.evaluate_batch(states, 1.0)
        assert batch.failed.tolist() == [True, False]
        with pytest.raises(IndefiniteMatrixError):
            flow.evaluate(states[0], 1.0)


class TestFlowEval:
    """Tests for FlowEval helpers."""

    def test_drift_only(self):
        """drift_only should pair the drift with a zero matrix."""
        out = FlowEval.drift_only([1.0, 2.0])
        np.testing.assert_array_equal(out.diffusion, np.zeros((2, 2)))
