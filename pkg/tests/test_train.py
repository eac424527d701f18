import numpy as np
import pytest

from hairmatte.data import SynthConfig, generate_synthetic
from hairmatte.losses import LossConfig
from hairmatte.metrics import evaluate_dataset
from hairmatte.model import ModelSpec, build_model
from hairmatte.optim import Adadelta
from hairmatte.train import EpochRecord, TrainingDiverged, fit, history_from_csv, history_to_csv, train_step

TINY = ModelSpec("hairmattenet", 32, width_multiplier=0.125, decoder_depth=16)


@pytest.fixture(scope="module")
def small_set():
    return generate_synthetic(SynthConfig(seed=2, count=6, size=32, strand_width=(1.5, 2.5)))


def test_zero_epochs_returns_initial_weights(small_set):
    model = build_model(TINY, seed=1)
    res = fit(model, small_set, small_set, epochs=0)
    assert res.history == [] and res.best_epoch == 0
    for k, p in model.params.items():
        np.testing.assert_array_equal(res.model.params[k].data, p.data)


def test_fit_is_deterministic(small_set):
    runs = []
    for _ in range(2):
        res = fit(build_model(TINY, seed=1), small_set, small_set, epochs=3, batch_size=4, seed=5)
        runs.append(res)
    assert history_to_csv(runs[0].history) == history_to_csv(runs[1].history)
    for k in runs[0].model.params:
        assert runs[0].model.params[k].data.tobytes() == runs[1].model.params[k].data.tobytes()


def test_different_seed_changes_history(small_set):
    a = fit(build_model(TINY, seed=1), small_set, small_set, epochs=2, seed=0)
    b = fit(build_model(TINY, seed=1), small_set, small_set, epochs=2, seed=1)
    assert history_to_csv(a.history) != history_to_csv(b.history)


def test_best_epoch_matches_history(small_set):
    res = fit(build_model(TINY, seed=1), small_set, small_set, epochs=4, seed=0)
    ious = [r.val_iou for r in res.history]
    assert res.best_epoch == 1 + int(np.argmax(ious))
    again = evaluate_dataset(res.model, small_set)
    assert again.iou == pytest.approx(ious[res.best_epoch - 1], abs=1e-12)


def test_train_step_reduces_loss_on_fixed_batch(small_set):
    model = build_model(TINY, seed=3)
    opt = Adadelta()
    x, y = small_set.arrays()
    losses = [train_step(model, opt, x, y, LossConfig()).total for _ in range(15)]
    assert losses[-1] < losses[0]


def test_divergence_raises(small_set):
    model = build_model(TINY, seed=3)
    with np.errstate(all="ignore"), pytest.raises(TrainingDiverged) as err:
        fit(model, small_set, small_set, epochs=2, optimizer=Adadelta(lr=1e30))
    assert err.value.epoch >= 1


def test_empty_sets_rejected(small_set):
    with pytest.raises(ValueError):
        fit(build_model(TINY), small_set.subset([]), small_set, epochs=1)


def test_history_csv_round_trip():
    recs = [EpochRecord(1, 0.5, 0.25, 1e-3, 0.626, 0.8, 0.7, 0.9, 0.1), EpochRecord(2, 0.1 / 3, 0.2, 2e-3, 0.3, 0.81, 0.71, 0.91, 0.09)]
    assert history_from_csv(history_to_csv(recs)) == recs


def test_overfit_ten_images(overfit_run):
    ds, res = overfit_run
    assert len(res.history) == 200
    assert evaluate_dataset(res.model, ds).iou > 0.95
