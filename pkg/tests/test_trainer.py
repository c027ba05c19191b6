import pytest
import torch

from auglearn import (
    ContractViolation,
    EpisodeSplit,
    HypergradConfig,
    SplitError,
    TrainConfig,
    erm_step,
    init_state,
    inner_step,
    make_split,
    outer_step,
    train,
    write_metrics_csv,
)
from auglearn.trainer import _epoch_batches, derive_seed


def cfg_for(mode, **kw):
    base = dict(
        mode=mode,
        inner_lr=0.05,
        outer_lr=0.005,
        inner_iters=1,
        batch_size=4,
        epochs=1,
        weight_decay=5e-4,
        seed=0,
        hypergrad=HypergradConfig(k=3, alpha=0.005),
        aug_residual=True,
        dtype="float64",
    )
    base.update(kw)
    return TrainConfig(**base)


def batches_from(domains, n=4, dtype=torch.float64):
    # a Batch is the plain tuple (domain_id, images, labels)
    return [(d.domain_id, d.images[:n].to(dtype), d.labels[:n]) for d in domains]


def test_derive_seed_deterministic():
    assert derive_seed(3, 21) == derive_seed(3, 21)
    assert derive_seed(3, 21) != derive_seed(3, 22)
    assert derive_seed(4, 21) != derive_seed(3, 21)


def test_config_validation():
    with pytest.raises(ContractViolation):
        cfg_for("erm", inner_lr=0.0)
    with pytest.raises(ContractViolation):
        cfg_for("nope")
    with pytest.raises(ContractViolation):
        cfg_for("erm", batch_size=0)
    with pytest.raises(ContractViolation):
        cfg_for("erm", dtype="float16")


def test_lr_decay_single_event():
    cfg = cfg_for("erm", inner_lr=0.1, inner_decay=(0.1, 3))
    assert cfg.inner_lr_at(0) == pytest.approx(0.1)
    assert cfg.inner_lr_at(2) == pytest.approx(0.1)
    assert cfg.inner_lr_at(3) == pytest.approx(0.01)
    assert cfg.inner_lr_at(9) == pytest.approx(0.01)


def test_make_split_deterministic_and_uniform(tiny_domains):
    batches = batches_from(tiny_domains)
    a = make_split(batches, seed=0, step=7)
    b = make_split(batches, seed=0, step=7)
    assert a.ptrg[0][0] == b.ptrg[0][0]
    seen = {make_split(batches, seed=0, step=s).ptrg[0][0] for s in range(50)}
    assert seen == {"d0", "d1", "d2"}  # every domain eventually held out


def test_make_split_needs_two_domains(tiny_domains):
    with pytest.raises(SplitError):
        make_split(batches_from(tiny_domains[:1]), seed=0, step=0)


def test_episode_split_disjoint(tiny_domains):
    b = batches_from(tiny_domains)
    with pytest.raises(SplitError):
        EpisodeSplit(psrc=(b[0], b[1]), ptrg=(b[1],))


def test_epoch_batches_shapes_and_determinism(tiny_domains):
    cfg = cfg_for("erm", batch_size=8)
    a = list(_epoch_batches(list(tiny_domains), cfg, epoch=0, dtype=torch.float64))
    b = list(_epoch_batches(list(tiny_domains), cfg, epoch=0, dtype=torch.float64))
    assert len(a) == 20 // 8  # remainder dropped
    for step_a, step_b in zip(a, b):
        for ba, bb in zip(step_a, step_b):
            assert torch.equal(ba[1], bb[1])
    c = list(_epoch_batches(list(tiny_domains), cfg, epoch=1, dtype=torch.float64))
    assert not torch.equal(a[0][0][1], c[0][0][1])  # reshuffled per epoch


def test_epoch_batches_rejects_oversized_batch(tiny_domains):
    cfg = cfg_for("erm", batch_size=50)
    with pytest.raises(ContractViolation):
        list(_epoch_batches(list(tiny_domains), cfg, epoch=0, dtype=torch.float64))


def test_erm_step_reduces_loss_and_logs(tiny_domains):
    cfg = cfg_for("erm")
    st = init_state(cfg, 10, 3, (16, 16))
    batches = batches_from(tiny_domains)
    pooled = (torch.cat([b[1] for b in batches]), torch.cat([b[2] for b in batches]))
    for _ in range(8):
        st = erm_step(st, pooled, cfg)
    hist = st.history
    assert len(hist) == 8
    assert hist[-1].l_inner < hist[0].l_inner
    assert hist[0].mode == "erm"
    assert hist[0].l_outer is None and hist[0].ptrg_acc is None


def test_inner_step_trains_theta_only(tiny_domains):
    cfg = cfg_for("auglearn")
    st = init_state(cfg, 10, 3, (16, 16))
    split = make_split(batches_from(tiny_domains), 0, 0)
    phi_before = st.phi.cloned()
    st2 = inner_step(st, split, cfg)
    assert st2.phi.distance(phi_before) == 0.0
    assert st2.theta.distance(st.theta) > 0.0


def test_outer_step_trains_phi_only(tiny_domains):
    cfg = cfg_for("auglearn")
    st = init_state(cfg, 10, 3, (16, 16))
    split = make_split(batches_from(tiny_domains), 0, 0)
    st = inner_step(st, split, cfg)
    theta_before = st.theta.cloned()
    st2 = outer_step(st, split, cfg)
    assert st2.theta.distance(theta_before) == 0.0
    assert st2.phi.distance(st.phi) > 0.0
    row = st2.history[-1]
    assert row.l_outer is not None and row.psrc_acc is not None and row.ptrg_acc is not None
    assert st2.last_diag["estimator"] == "neumann"


def test_no_ml_mode_first_order(tiny_domains):
    cfg = cfg_for("no_ml")
    st = init_state(cfg, 10, 3, (16, 16))
    split = make_split(batches_from(tiny_domains), 0, 0)
    st = inner_step(st, split, cfg)
    st = outer_step(st, split, cfg)
    assert st.last_diag["estimator"] == "first_order"
    assert st.phi.norm() > 0.0


def test_train_modes_smoke(tiny_domains):
    for mode in ("erm", "auglearn", "auglearn_f", "no_ml"):
        cfg = cfg_for(mode, epochs=1, batch_size=8, dtype="float32")
        st = train(list(tiny_domains), cfg)
        assert st.step == 2  # 20 samples per domain / batch 8 -> 2 steps
        assert len(st.history) == 2
        assert all(r.mode == mode for r in st.history)


def test_train_meta_needs_two_domains(tiny_domains):
    cfg = cfg_for("auglearn")
    with pytest.raises(SplitError):
        train([tiny_domains[0]], cfg)


def test_train_erm_single_domain_ok(tiny_domains):
    cfg = cfg_for("erm", epochs=1, batch_size=8, dtype="float32")
    st = train([tiny_domains[0]], cfg)
    assert st.step == 2


def test_metrics_csv_format_and_determinism(tiny_domains, tmp_path):
    cfg = cfg_for("auglearn", epochs=1, batch_size=8, dtype="float32")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_metrics_csv(train(list(tiny_domains), cfg).history, a)
    write_metrics_csv(train(list(tiny_domains), cfg).history, b)
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert lines[0] == "epoch,step,mode,L_inner,L_outer,psrc_acc,ptrg_acc"
    assert len(lines) == 3


def test_seed_changes_trajectory(tiny_domains):
    cfg0 = cfg_for("erm", epochs=1, batch_size=8, dtype="float32")
    cfg1 = cfg_for("erm", epochs=1, batch_size=8, dtype="float32", seed=1)
    h0 = train(list(tiny_domains), cfg0).history
    h1 = train(list(tiny_domains), cfg1).history
    assert h0[-1].l_inner != h1[-1].l_inner
