import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from tmtrack import agent as ag
from tmtrack.datasets import SynthConfig, generate_synthetic
from tmtrack.estimator import TemplateTracker
from tmtrack.pipeline import ConstantPolicy
from tmtrack.proposals import DetectorScript
from tmtrack.template import Action


@pytest.fixture(scope="module")
def data():
    return [generate_synthetic(SynthConfig(name=f"e{i}", width=64, height=64, frames=11, objects=1,
                                           min_size=12, max_size=18, seed=i)) for i in range(2)]


def test_params_round_trip():
    est = TemplateTracker(gamma=0.5, iterations=10, detector_script=DetectorScript(jitter=0.1))
    params = est.get_params()
    assert params["gamma"] == 0.5 and params["iterations"] == 10
    again = clone(est)
    assert again.get_params() == params
    est.set_params(n_keep=5)
    assert est.tracker_config().n_keep == 5


def test_unfitted_predict_raises(data):
    with pytest.raises(NotFittedError):
        TemplateTracker().predict(data)


def test_fit_predict_score(data):
    est = TemplateTracker(iterations=40, random_state=3).fit(data)
    assert est.agent_.iteration == 40 and est.curve_.rows
    labels = est.predict(data)
    assert len(labels) == 2 and len(labels[0]) == 11 and labels[0][0].shape == (64, 64)
    assert 0.0 <= est.score(data) <= 1.0
    again = TemplateTracker(iterations=40, random_state=3).fit(data)
    assert ag.dumps_checkpoint(again.agent_) == ag.dumps_checkpoint(est.agent_)


def test_identity_detector_scores_one_when_always_updating(data):
    est = TemplateTracker()
    results = est.track(data, policy=ConstantPolicy(Action.UPDATE))
    assert all(len(r.masks) == 11 for r in results)
    est.set_agent(ag.AgentNet(seed=0))
    assert est.score(data) <= 1.0


def test_set_agent_checks_dimension():
    with pytest.raises(ValueError):
        TemplateTracker().set_agent(ag.AgentNet(feature_dim=10))


def test_input_validation(data):
    with pytest.raises(TypeError):
        TemplateTracker(iterations=1).fit([np.zeros(3)])
    with pytest.raises(ValueError):
        TemplateTracker(iterations=1).fit([])
    with pytest.raises(ValueError):
        TemplateTracker().track(data, detectors=[None], policy=ConstantPolicy(Action.KEEP))
