import math

import numpy as np
import pandas as pd
import pytest

from distilvad.discriminator import build_discriminator
from distilvad.exceptions import (
    CheckpointError,
    ConfigError,
    EmptyDatasetError,
    NonFiniteError,
    TeacherResolutionError,
)
from distilvad.models import build_student
from distilvad.optim import AdamState
from distilvad.synthvid import Clip
from distilvad.teachers import Teacher, TeacherOutput
from distilvad.tensor import Tape, Tensor, set_default_dtype
from distilvad.training import (
    DISCRIMINATOR_STREAM,
    LOSS_COLUMNS,
    LossReport,
    assemble_sequence,
    batches_for_epoch,
    _stream,
    build_targets,
    check_teacher_resolution,
    discriminator_update,
    distill_step,
    distill_train,
    frame_offsets,
    load_pretrained_encoder,
    make_batch,
    pretrain_ae,
    sequence_index,
    valid_centers,
    write_loss_csv,
)


class FixedTeacher(Teacher):
    """Returns the same small map for every frame."""

    def __init__(self, size):
        super().__init__(f"fixed{size}")
        self.size = size

    def full_map(self, clip, frame_index):
        return TeacherOutput(np.ones((self.size, self.size), dtype=np.float32), "test")


def test_sequence_offsets_and_centres():
    assert frame_offsets(3, 2) == [-2, 0, 2]
    assert frame_offsets(1, 5) == [0]
    assert frame_offsets(5, 1) == [-2, -1, 0, 1, 2]
    assert valid_centers(10, 2, 3) == list(range(2, 8))
    assert valid_centers(3, 2, 3) == []


def test_assemble_sequence_stacks_scaled_frames():
    frames = np.arange(5, dtype=np.uint8)[:, None, None] * np.ones((1, 2, 2), dtype=np.uint8) * 50
    seq = assemble_sequence(frames, 2, 2, 3)
    assert seq.shape == (3, 2, 2)
    np.testing.assert_allclose(seq[:, 0, 0], [0.0, 100 / 255, 200 / 255])
    with pytest.raises(IndexError):
        assemble_sequence(frames, 1, 2, 3)
    clamped = assemble_sequence(frames, 0, 2, 3, clamp=True)
    np.testing.assert_allclose(clamped[:, 0, 0], [0.0, 0.0, 100 / 255])


def test_epoch_order_depends_on_seed_and_epoch(make_train_cfg):
    cfg = make_train_cfg(max_batches_per_epoch=0, batch_size=5)
    first = batches_for_epoch(23, cfg, 1)
    assert [len(b) for b in first] == [5, 5, 5, 5, 3]
    assert sorted(np.concatenate(first).tolist()) == list(range(23))
    np.testing.assert_array_equal(np.concatenate(first), np.concatenate(batches_for_epoch(23, cfg, 1)))
    assert not np.array_equal(np.concatenate(first), np.concatenate(batches_for_epoch(23, cfg, 2)))
    capped = batches_for_epoch(23, make_train_cfg(max_batches_per_epoch=2, batch_size=5), 1)
    assert len(capped) == 2


@pytest.mark.parametrize("overrides,key", [
    (dict(alpha=-0.1), "train.alpha"),
    (dict(teacher_weights=[1.0, -1.0]), "train.teacher_weights"),
    (dict(stride=0), "train.stride"),
    (dict(gan_form="wasserstein"), "train.gan_form"),
    (dict(distill_split="test"), "train.distill_split"),
    (dict(use_kd=False, use_akd=False), "train.use_kd"),
    (dict(use_kd=False, alpha=0.0), "train.alpha"),
    (dict(teacher_weights=[0.0, 0.0]), "train.teacher_weights"),
])
def test_train_config_validation(make_train_cfg, overrides, key):
    with pytest.raises(ConfigError) as err:
        make_train_cfg(**overrides).validate()
    assert err.value.key == key


def test_loss_report_rows_fill_unused_terms():
    row = LossReport("pretrain", 1, 0, l_ae=0.5, l_total=0.5).to_row()
    assert list(row) == LOSS_COLUMNS
    assert math.isnan(row["l_kd"]) and math.isnan(row["d1_loss"])
    row = LossReport("distill", 1, 0, l_kd=1.0, d_losses=[0.1, 0.2, 0.3]).to_row()
    assert row["d3_loss"] == 0.3


def test_loss_csv_keeps_other_phase_and_earlier_epochs(tmp_path):
    path = str(tmp_path / "losses.csv")
    write_loss_csv(path, [LossReport("pretrain", e, 0, l_ae=1.0 / e) for e in (1, 2)], "pretrain")
    write_loss_csv(path, [LossReport("distill", e, 0, l_kd=1.0) for e in (1, 2)], "distill")
    write_loss_csv(path, [LossReport("distill", 2, 0, l_kd=9.0)], "distill", keep_until_epoch=1)
    df = pd.read_csv(path)
    assert list(df.columns) == LOSS_COLUMNS
    assert list(zip(df["phase"], df["epoch"])) == [("pretrain", 1), ("pretrain", 2),
                                                   ("distill", 1), ("distill", 2)]
    assert df["l_kd"].iloc[-1] == 9.0


def test_targets_are_normalized_per_teacher(tiny_dataset, oracle_teachers, tiny_cfg):
    clips = tiny_dataset.distill
    samples = sequence_index(clips, 2, 3)
    targets = build_targets(clips, samples, oracle_teachers, tiny_cfg.head_resolutions, workers=2)
    assert len(targets) == 2
    for per_teacher in targets:
        assert [t.shape for t in per_teacher] == [(len(samples), 1, h, w)
                                                 for h, w in tiny_cfg.head_resolutions]
        assert all(t.min() >= 0.0 and t.max() <= 1.0 for t in per_teacher)
    again = build_targets(clips, samples, oracle_teachers, tiny_cfg.head_resolutions, workers=1)
    np.testing.assert_array_equal(targets[0][2], again[0][2])


def test_coarse_teacher_is_rejected_before_training(tiny_dataset, tiny_cfg, make_train_cfg):
    with pytest.raises(TeacherResolutionError):
        check_teacher_resolution(tiny_dataset.distill, [FixedTeacher(2)], tiny_cfg.head_resolutions)
    with pytest.raises(TeacherResolutionError):
        distill_train(tiny_dataset.distill, [FixedTeacher(38), FixedTeacher(2)], tiny_cfg,
                      make_train_cfg(pretrained=False))


def test_pretraining_runs_and_checkpoints(tmp_path, tiny_dataset, tiny_cfg, make_train_cfg):
    ckpt, csv = str(tmp_path / "encoder.ckpt"), str(tmp_path / "losses.csv")
    result = pretrain_ae(tiny_dataset.train, tiny_cfg, make_train_cfg(pretrain_epochs=2),
                         checkpoint_path=ckpt, loss_csv=csv)
    assert len(result.reports) == 4
    assert all(np.isfinite(r.l_ae) for r in result.reports)
    assert result.state.step == 4
    df = pd.read_csv(csv)
    assert set(df["phase"]) == {"pretrain"}
    assert (tmp_path / "encoder.ckpt").exists()


def test_pretraining_needs_complete_sequences(tiny_dataset, tiny_cfg, make_train_cfg):
    cut = [Clip(c.video_id, c.split, c.frames[:4], c.labels[:4], c.masks[:4]) for c in tiny_dataset.train]
    with pytest.raises(EmptyDatasetError):
        pretrain_ae(cut, tiny_cfg, make_train_cfg())


def test_pretraining_resume_matches_uninterrupted_run(tmp_path, tiny_dataset, tiny_cfg, make_train_cfg):
    # checkpoints hold float32, so the comparison is exact only in single precision
    set_default_dtype("float32")
    cfg = make_train_cfg(pretrain_epochs=2)
    full = pretrain_ae(tiny_dataset.train, tiny_cfg, cfg)
    ckpt = str(tmp_path / "encoder.ckpt")
    pretrain_ae(tiny_dataset.train, tiny_cfg, make_train_cfg(pretrain_epochs=1), checkpoint_path=ckpt)
    resumed = pretrain_ae(tiny_dataset.train, tiny_cfg, cfg, resume=ckpt)
    assert len(resumed.reports) == 2
    assert resumed.encoder.fingerprint() == full.encoder.fingerprint()
    assert resumed.decoder.fingerprint() == full.decoder.fingerprint()


def test_distillation_resume_matches_uninterrupted_run(tmp_path, tiny_dataset, oracle_teachers,
                                                       tiny_cfg, make_train_cfg):
    set_default_dtype("float32")
    clips = tiny_dataset.distill
    cfg = make_train_cfg(epochs=2, pretrained=False)
    full = distill_train(clips, oracle_teachers, tiny_cfg, cfg)
    ckpt = str(tmp_path / "student.ckpt")
    distill_train(clips, oracle_teachers, tiny_cfg, make_train_cfg(epochs=1, pretrained=False),
                  checkpoint_path=ckpt)
    resumed = distill_train(clips, oracle_teachers, tiny_cfg, cfg, resume=ckpt)
    assert resumed.student.fingerprint() == full.student.fingerprint()
    for a, b in zip(resumed.discriminators, full.discriminators):
        assert a.fingerprint() == b.fingerprint()


def test_zero_alpha_matches_distillation_without_adversary(tiny_dataset, oracle_teachers, tiny_cfg,
                                                           make_train_cfg):
    clips = tiny_dataset.distill
    with_adversary = distill_train(clips, oracle_teachers, tiny_cfg,
                                   make_train_cfg(alpha=0.0, use_akd=True, pretrained=False))
    kd_only = distill_train(clips, oracle_teachers, tiny_cfg,
                            make_train_cfg(alpha=0.0, use_akd=False, pretrained=False))
    assert with_adversary.student.fingerprint() == kd_only.student.fingerprint()
    assert all(len(r.d_losses) == 2 for r in with_adversary.reports)
    assert all(math.isnan(r.l_akd) for r in kd_only.reports)
    assert all(np.isfinite(r.l_akd) for r in with_adversary.reports)


def test_adversarial_term_changes_the_student(tiny_dataset, oracle_teachers, tiny_cfg, make_train_cfg):
    clips = tiny_dataset.distill
    base = distill_train(clips, oracle_teachers, tiny_cfg, make_train_cfg(alpha=0.0, pretrained=False))
    adv = distill_train(clips, oracle_teachers, tiny_cfg, make_train_cfg(alpha=0.5, pretrained=False))
    assert base.student.fingerprint() != adv.student.fingerprint()
    for r in adv.reports:
        assert r.l_total == pytest.approx(r.l_kd + 0.5 * r.l_akd)


def test_frozen_discriminators(tiny_dataset, oracle_teachers, tiny_cfg, make_train_cfg):
    cfg = make_train_cfg(d_steps_per_s_step=0, pretrained=False)
    result = distill_train(tiny_dataset.distill, oracle_teachers, tiny_cfg, cfg)
    fresh = build_discriminator(tiny_cfg.head_resolutions, _stream(cfg.seed, DISCRIMINATOR_STREAM, 0))
    assert result.discriminators[0].fingerprint() == fresh.fingerprint()
    assert all(r.d_losses == [] for r in result.reports)


def test_student_starts_from_pretrained_encoder(tiny_dataset, oracle_teachers, tiny_cfg, make_train_cfg):
    pre = pretrain_ae(tiny_dataset.train, tiny_cfg, make_train_cfg())
    result = distill_train(tiny_dataset.distill, oracle_teachers, tiny_cfg, make_train_cfg(epochs=0),
                           pretrained=pre.encoder.state_dict())
    student = dict(result.student.named_parameters())
    for name, param in pre.encoder.named_parameters():
        np.testing.assert_array_equal(student[name].data, param.data)


def test_pretrained_source_is_required(tiny_dataset, oracle_teachers, tiny_cfg, make_train_cfg):
    with pytest.raises(CheckpointError):
        distill_train(tiny_dataset.distill, oracle_teachers, tiny_cfg, make_train_cfg(epochs=0))


def test_incomplete_encoder_checkpoint(tiny_cfg):
    with pytest.raises(CheckpointError):
        load_pretrained_encoder(build_student(tiny_cfg, 0), {})


def test_weight_count_must_match_teachers(tiny_dataset, oracle_teachers, tiny_cfg, make_train_cfg):
    with pytest.raises(ConfigError):
        distill_train(tiny_dataset.distill, oracle_teachers[:1], tiny_cfg, make_train_cfg(pretrained=False))


@pytest.fixture
def step_parts(tiny_dataset, oracle_teachers, tiny_cfg):
    clips = tiny_dataset.distill
    samples = sequence_index(clips, 2, 3)[:4]
    x = Tensor(make_batch(clips, samples, 2, 3))
    targets = build_targets(clips, samples, oracle_teachers, tiny_cfg.head_resolutions, workers=1)
    student = build_student(tiny_cfg, 0)
    discriminators = [build_discriminator(tiny_cfg.head_resolutions, i + 1) for i in range(2)]
    return student, discriminators, x, targets


def test_discriminator_update_leaves_the_student_alone(step_parts):
    student, discriminators, x, targets = step_parts
    with Tape():
        maps = student(x)
    before = student.fingerprint()
    d_before = discriminators[0].fingerprint()
    discriminator_update(discriminators[0], AdamState(lr=1e-2), targets[0], maps)
    assert student.fingerprint() == before
    assert discriminators[0].fingerprint() != d_before


def test_student_step_leaves_the_discriminators_alone(step_parts, make_train_cfg):
    student, discriminators, x, targets = step_parts
    cfg = make_train_cfg(alpha=0.5, d_steps_per_s_step=0, lr=1e-2)
    before = [d.fingerprint() for d in discriminators]
    s_before = student.fingerprint()
    l_kd, l_akd, l_total, d_losses = distill_step(student, discriminators, AdamState(lr=1e-2),
                                                  [AdamState(lr=1e-2) for _ in discriminators],
                                                  x, targets, cfg)
    assert d_losses == []
    assert l_total == pytest.approx(l_kd + 0.5 * l_akd)
    assert student.fingerprint() != s_before
    assert [d.fingerprint() for d in discriminators] == before


@pytest.mark.parametrize("use_kd", [True, False])
def test_non_finite_batch_aborts_before_any_update(step_parts, make_train_cfg, use_kd):
    student, discriminators, x, targets = step_parts
    targets = [[head.copy() for head in per_teacher] for per_teacher in targets]
    targets[1][0][0] = np.nan
    s_state = AdamState(lr=1e-2)
    d_states = [AdamState(lr=1e-2) for _ in discriminators]
    before = [m.fingerprint() for m in [student] + discriminators]
    with pytest.raises(NonFiniteError):
        distill_step(student, discriminators, s_state, d_states, x, targets,
                     make_train_cfg(use_kd=use_kd, alpha=0.1))
    assert [m.fingerprint() for m in [student] + discriminators] == before
    assert s_state.step == 0 and all(st.step == 0 for st in d_states)


def test_teachers_are_untouched_by_training(tiny_dataset, oracle_teachers, tiny_cfg, make_train_cfg):
    clips = tiny_dataset.distill
    samples = sequence_index(clips, 2, 3)
    before = build_targets(clips, samples, oracle_teachers, tiny_cfg.head_resolutions, workers=1)
    raw = [t(clips[0], 5).full_map.copy() for t in oracle_teachers]
    distill_train(clips, oracle_teachers, tiny_cfg, make_train_cfg(alpha=0.5, pretrained=False))
    after = build_targets(clips, samples, oracle_teachers, tiny_cfg.head_resolutions, workers=1)
    for a, b in zip(before, after):
        for head_a, head_b in zip(a, b):
            np.testing.assert_array_equal(head_a, head_b)
    for teacher, full in zip(oracle_teachers, raw):
        np.testing.assert_array_equal(teacher(clips[0], 5).full_map, full)
