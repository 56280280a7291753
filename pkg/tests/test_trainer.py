"""Training loop: stage wiring, determinism, reductions, and failure modes."""

import numpy as np
import pytest

import ctdistill.tensor as T
from ctdistill.data import SyntheticSpec, generate_synthetic
from ctdistill.encoder import EncoderConfig, TransformerEncoder
from ctdistill.errors import ConfigError, InputError, NumericError
from ctdistill.losses import LossWeights
from ctdistill.train import (
    CRD_STAGES,
    KD_STAGES,
    STAGES,
    TrainConfig,
    adopt_arrays,
    evaluate,
    train,
)


def class_data(n=48, seed=0, num_classes=2):
    spec = SyntheticSpec(kind="classification", num_classes=num_classes,
                         max_len=9)
    return generate_synthetic(spec, n, seed=seed)


def corpus_data(n=24, seed=0):
    spec = SyntheticSpec(kind="corpus", max_len=9)
    return generate_synthetic(spec, n, seed=seed)


def enc_cfg(vocab, head="classification", layers=1, dim=8, num_classes=2):
    return EncoderConfig(
        num_layers=layers, hidden_dim=dim, num_heads=2, vocab_size=len(vocab),
        max_len=16, num_classes=num_classes, dropout_rate=0.0, head=head)


def make_teacher(vocab, head="classification", layers=2, dim=8, seed=7,
                 num_classes=2):
    return TransformerEncoder(
        enc_cfg(vocab, head=head, layers=layers, dim=dim,
                num_classes=num_classes), seed=seed)


# ------------------------------------------------------------ config guards

def test_stage_lists_are_consistent():
    assert set(KD_STAGES) <= set(STAGES)
    assert set(CRD_STAGES) <= set(KD_STAGES)


def test_config_rejects_unknown_stage():
    _, vocab = class_data()
    with pytest.raises(ConfigError, match="stage"):
        TrainConfig(stage="warmup", encoder=enc_cfg(vocab))


def test_config_rejects_k_outside_contrastive_stages():
    _, vocab = class_data()
    with pytest.raises(ConfigError):
        TrainConfig(stage="finetune_standard", encoder=enc_cfg(vocab), K=4)
    with pytest.raises(ConfigError):
        TrainConfig(stage="finetune_kd", encoder=enc_cfg(vocab), K=4)


def test_config_rejects_weights_outside_their_stages():
    _, vocab = class_data()
    with pytest.raises(ConfigError):
        TrainConfig(stage="finetune_standard", encoder=enc_cfg(vocab),
                    weights=LossWeights(alpha1=0.5))
    with pytest.raises(ConfigError):
        TrainConfig(stage="finetune_kd", encoder=enc_cfg(vocab),
                    weights=LossWeights(alpha1=0.5, alpha2=0.5))


def test_config_rejects_mismatched_head():
    _, vocab = class_data()
    with pytest.raises(ConfigError, match="head"):
        TrainConfig(stage="pretrain_mlm", encoder=enc_cfg(vocab))
    with pytest.raises(ConfigError, match="head"):
        TrainConfig(stage="finetune_standard",
                    encoder=enc_cfg(vocab, head="mlm"))


def test_config_rejects_bad_basics():
    _, vocab = class_data()
    with pytest.raises(ConfigError):
        TrainConfig(stage="finetune_standard", encoder=enc_cfg(vocab),
                    batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(stage="finetune_standard", encoder=enc_cfg(vocab),
                    total_steps=-1)
    with pytest.raises(ConfigError):
        TrainConfig(stage="finetune_standard", encoder=enc_cfg(vocab),
                    summary_mode="max")
    with pytest.raises(ConfigError):
        TrainConfig(stage="finetune_standard", encoder=enc_cfg(vocab),
                    proj_dim=0)


# ------------------------------------------------------------ basic runs

def test_zero_steps_returns_fresh_initialization():
    ds, vocab = class_data()
    cfg = TrainConfig(stage="finetune_standard", encoder=enc_cfg(vocab),
                      total_steps=0, seed=3)
    a = train(cfg, ds)
    b = train(cfg, ds)
    assert a.record.rows == []
    for name in a.model.params:
        assert np.array_equal(a.model.params[name].data,
                              b.model.params[name].data)


def test_training_is_bitwise_reproducible_under_seed():
    ds, vocab = class_data()
    cfg = dict(stage="finetune_standard", encoder=enc_cfg(vocab),
               total_steps=8, batch_size=4, seed=11)
    a = train(TrainConfig(**cfg), ds)
    b = train(TrainConfig(**cfg), ds)
    assert np.array_equal(a.record.loss_curve(), b.record.loss_curve())
    for name in a.model.params:
        assert np.array_equal(a.model.params[name].data,
                              b.model.params[name].data)
    c = train(TrainConfig(**{**cfg, "seed": 12}), ds)
    assert not np.array_equal(a.record.loss_curve(), c.record.loss_curve())


def test_loss_decomposes_into_weighted_terms():
    ds, vocab = class_data()
    teacher = make_teacher(vocab)
    w = LossWeights(alpha1=0.7, alpha2=0.4, rho=2.0, tau=0.2)
    cfg = TrainConfig(stage="finetune_codir", encoder=enc_cfg(vocab),
                      weights=w, total_steps=6, batch_size=4, K=3, seed=5)
    res = train(cfg, ds, teacher=teacher)
    curve = res.record.loss_curve()
    recomposed = curve[:, 0] + 0.7 * curve[:, 1] + 0.4 * curve[:, 2]
    np.testing.assert_allclose(curve[:, 3], recomposed, rtol=0, atol=1e-12)
    assert np.all(curve[:, 1] >= 0.0)
    assert res.bank is not None and res.phi_s is not None


def test_mlm_pretraining_runs_and_records():
    ds, vocab = corpus_data()
    cfg = TrainConfig(stage="pretrain_mlm",
                      encoder=enc_cfg(vocab, head="mlm"),
                      total_steps=5, batch_size=4, shuffle=False, seed=2)
    res = train(cfg, ds)
    curve = res.record.loss_curve()
    assert curve.shape == (5, 4)
    assert np.all(curve[:, 1] == 0.0) and np.all(curve[:, 2] == 0.0)
    np.testing.assert_array_equal(curve[:, 0], curve[:, 3])


def test_pretrain_codir_runs_with_teacher():
    ds, vocab = corpus_data()
    teacher = make_teacher(vocab, head="mlm")
    w = LossWeights(alpha1=0.5, alpha2=0.5)
    cfg = TrainConfig(stage="pretrain_codir",
                      encoder=enc_cfg(vocab, head="mlm"),
                      weights=w, total_steps=4, batch_size=4, K=2,
                      shuffle=False, seed=6)
    res = train(cfg, ds, teacher=teacher)
    curve = res.record.loss_curve()
    assert np.all(curve[:, 1] != 0.0)
    assert np.all(curve[:, 2] != 0.0)


# ------------------------------------------------------------ reductions

def reduction_pair(stage_big, stage_small, w_big, k_big, ds, vocab, teacher,
                   head="classification"):
    common = dict(total_steps=6, batch_size=4, seed=21)
    big = TrainConfig(stage=stage_big, encoder=enc_cfg(vocab, head=head),
                      weights=w_big, K=k_big, **common)
    small = TrainConfig(stage=stage_small, encoder=enc_cfg(vocab, head=head),
                        **common)
    a = train(big, ds, teacher=teacher)
    b = train(small, ds,
              teacher=teacher if stage_small in KD_STAGES else None)
    return a, b


def test_codir_with_zero_weights_reduces_to_standard_bitwise():
    ds, vocab = class_data()
    teacher = make_teacher(vocab)
    a, b = reduction_pair("finetune_codir", "finetune_standard",
                          LossWeights(), 0, ds, vocab, teacher)
    assert np.array_equal(a.record.loss_curve(), b.record.loss_curve())
    for name in a.model.params:
        assert np.array_equal(a.model.params[name].data,
                              b.model.params[name].data)


def test_kd_with_zero_weight_reduces_to_standard_bitwise():
    ds, vocab = class_data()
    teacher = make_teacher(vocab)
    a, b = reduction_pair("finetune_kd", "finetune_standard",
                          LossWeights(), 0, ds, vocab, teacher)
    assert np.array_equal(a.record.loss_curve(), b.record.loss_curve())


def test_codir_with_only_kd_reduces_to_kd_stage_bitwise():
    ds, vocab = class_data()
    teacher = make_teacher(vocab)
    common = dict(total_steps=6, batch_size=4, seed=22)
    w = LossWeights(alpha1=0.8)
    a = train(TrainConfig(stage="finetune_codir", encoder=enc_cfg(vocab),
                          weights=w, K=0, **common), ds, teacher=teacher)
    b = train(TrainConfig(stage="finetune_kd", encoder=enc_cfg(vocab),
                          weights=w, **common), ds, teacher=teacher)
    assert np.array_equal(a.record.loss_curve(), b.record.loss_curve())


def test_pretrain_codir_with_zero_weights_reduces_to_mlm_bitwise():
    ds, vocab = corpus_data()
    teacher = make_teacher(vocab, head="mlm")
    common = dict(total_steps=5, batch_size=4, shuffle=False, seed=23)
    a = train(TrainConfig(stage="pretrain_codir",
                          encoder=enc_cfg(vocab, head="mlm"),
                          weights=LossWeights(), K=0, **common),
              ds, teacher=teacher)
    b = train(TrainConfig(stage="pretrain_mlm",
                          encoder=enc_cfg(vocab, head="mlm"), **common), ds)
    assert np.array_equal(a.record.loss_curve(), b.record.loss_curve())


def test_k_zero_means_no_contrastive_machinery():
    ds, vocab = class_data()
    teacher = make_teacher(vocab)
    cfg = TrainConfig(stage="finetune_codir", encoder=enc_cfg(vocab),
                      weights=LossWeights(alpha2=0.5), total_steps=3,
                      batch_size=4, K=0, seed=9)
    res = train(cfg, ds, teacher=teacher)
    assert np.all(res.record.loss_curve()[:, 2] == 0.0)
    assert res.bank is None and res.phi_s is None


# ------------------------------------------------------------ bank traffic

def test_bank_sees_one_write_and_k_reads_per_example():
    ds, vocab = class_data(n=20)
    teacher = make_teacher(vocab)
    cfg = TrainConfig(stage="finetune_codir", encoder=enc_cfg(vocab),
                      weights=LossWeights(alpha2=1.0), total_steps=5,
                      batch_size=1, K=3, seed=13)
    res = train(cfg, ds, teacher=teacher)
    assert res.record.crd_skipped == 0
    assert res.bank.writes == 5
    assert res.bank.reads == 15


def test_crd_skips_are_counted_when_no_negative_exists():
    ds, vocab = class_data(n=16)
    for e in ds.examples:
        e.label = 1  # single observed label, two declared classes
    teacher = make_teacher(vocab)
    cfg = TrainConfig(stage="finetune_codir", encoder=enc_cfg(vocab),
                      weights=LossWeights(alpha2=1.0), total_steps=3,
                      batch_size=4, K=2, seed=14)
    res = train(cfg, ds, teacher=teacher)
    assert res.record.crd_skipped == 12
    assert np.all(res.record.loss_curve()[:, 2] == 0.0)
    assert res.record.final["crd_skipped"] == 12


# ------------------------------------------------------------ failures

def test_distillation_stages_require_a_teacher():
    ds, vocab = class_data()
    for stage in ("finetune_kd", "finetune_codir"):
        cfg = TrainConfig(stage=stage, encoder=enc_cfg(vocab), total_steps=1)
        with pytest.raises(ConfigError, match="teacher"):
            train(cfg, ds)


def test_teacher_class_count_must_match():
    ds, vocab = class_data()
    teacher = make_teacher(vocab, num_classes=5)
    cfg = TrainConfig(stage="finetune_kd", encoder=enc_cfg(vocab),
                      weights=LossWeights(alpha1=1.0), total_steps=1)
    with pytest.raises(ConfigError, match="class"):
        train(cfg, ds, teacher=teacher)


def test_empty_dataset_is_rejected():
    ds, vocab = class_data()
    ds.examples = []
    cfg = TrainConfig(stage="finetune_standard", encoder=enc_cfg(vocab),
                      total_steps=1)
    with pytest.raises(InputError):
        train(cfg, ds)


def test_dataset_class_count_must_match_encoder():
    ds, vocab = class_data(num_classes=3)
    cfg = TrainConfig(stage="finetune_standard",
                      encoder=enc_cfg(vocab, num_classes=2), total_steps=1)
    with pytest.raises(ConfigError, match="classes"):
        train(cfg, ds)


@pytest.mark.filterwarnings("ignore:invalid value encountered")
def test_non_finite_loss_aborts_with_the_step_number():
    ds, vocab = class_data()
    cfg = TrainConfig(stage="finetune_standard", encoder=enc_cfg(vocab),
                      total_steps=2, batch_size=4, seed=1)
    fresh = TransformerEncoder(cfg.encoder, seed=0)
    poisoned = {n: t.data.copy() for n, t in fresh.params.items()}
    poisoned["tok_emb"][:] = np.inf
    T.set_finite_checks(False)
    try:
        with pytest.raises(NumericError, match="step 0"):
            train(cfg, ds, init_arrays=poisoned)
    finally:
        T.set_finite_checks(True)


def test_warm_start_must_match_something():
    ds, vocab = class_data()
    cfg = TrainConfig(stage="finetune_standard", encoder=enc_cfg(vocab),
                      total_steps=1)
    with pytest.raises(ConfigError, match="matched no parameters"):
        train(cfg, ds, init_arrays={"bogus": np.zeros(3)})


def test_adopt_arrays_matches_by_name_and_shape():
    _, vocab = class_data()
    model = TransformerEncoder(enc_cfg(vocab), seed=0)
    donor = TransformerEncoder(enc_cfg(vocab), seed=1)
    arrays = {n: t.data for n, t in donor.params.items()}
    arrays["head.w"] = np.zeros((99, 99))  # wrong shape: skipped
    arrays["not_a_param"] = np.zeros(2)
    n = adopt_arrays(model, arrays)
    assert n == len(model.params) - 1
    assert np.array_equal(model.params["tok_emb"].data,
                          donor.params["tok_emb"].data)
    assert not np.array_equal(model.params["head.w"].data,
                              np.zeros((99, 99)))


# ------------------------------------------------------------ learning

def test_overfits_a_tiny_separable_dataset():
    spec = SyntheticSpec(kind="classification", marker_prob=1.0, max_len=8)
    ds, vocab = generate_synthetic(spec, 10, seed=4)
    cfg = TrainConfig(stage="finetune_standard",
                      encoder=enc_cfg(vocab, dim=16),
                      total_steps=150, batch_size=10, lr=5e-3, seed=4)
    res = train(cfg, ds, eval_dataset=ds)
    assert res.record.eval_accuracy == 1.0
    first, last = res.record.loss_curve()[0, 0], res.record.loss_curve()[-1, 0]
    assert last < first


def test_untrained_models_sit_in_the_chance_band():
    ds, vocab = class_data(n=200, seed=8)
    accs = []
    for seed in range(10):
        cfg = TrainConfig(stage="finetune_standard", encoder=enc_cfg(vocab),
                          total_steps=0, seed=seed)
        res = train(cfg, ds, eval_dataset=ds)
        accs.append(res.record.eval_accuracy)
    assert 0.35 <= float(np.mean(accs)) <= 0.65


# ------------------------------------------------------------ evaluate

def test_evaluate_reports_per_class_tallies():
    ds, vocab = class_data(n=40, seed=15)
    model = TransformerEncoder(enc_cfg(vocab), seed=0)
    res = evaluate(model, ds)
    assert res.per_class_total.sum() == 40
    np.testing.assert_array_equal(res.per_class_total,
                                  np.bincount(ds.labels, minlength=2))
    assert res.per_class_correct.sum() / 40 == res.accuracy
    assert np.all(res.per_class_correct <= res.per_class_total)


def test_evaluate_rejects_empty_and_class_overflow():
    ds, vocab = class_data(n=10)
    model = TransformerEncoder(enc_cfg(vocab), seed=0)
    empty = type(ds)(examples=[], num_classes=2)
    with pytest.raises(InputError):
        evaluate(model, empty)
    ds3, _ = class_data(n=12, num_classes=3)
    with pytest.raises(ConfigError):
        evaluate(model, ds3)


# ------------------------------------------------------------ records

def test_run_record_csv_round_trip(tmp_path):
    ds, vocab = class_data()
    cfg = TrainConfig(stage="finetune_standard", encoder=enc_cfg(vocab),
                      total_steps=4, batch_size=4, seed=16)
    res = train(cfg, ds)
    p = tmp_path / "run.csv"
    res.record.to_csv(p)
    lines = p.read_text(encoding="utf-8").strip().split("\n")
    assert lines[0] == "step,task_loss,kd_loss,crd_loss,total,lr,wall_ms"
    assert len(lines) == 5
    back = np.array([[float(v) for v in ln.split(",")[1:5]]
                     for ln in lines[1:]])
    np.testing.assert_array_equal(back, res.record.loss_curve())
