"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line.  Run with `pytest tests/test_acceptance.py -v -s`."""

import time

import numpy as np

from braincnn.data import (AugmentParams, SplitSpec, make_fixtures,
                           scan_dataset, stratified_split)
from braincnn.errors import CheckpointCorruptError, CheckpointFormatError
from braincnn.layers import (build_custom_cnn, backward_pass, forward_pass,
                             init_parameters)
from braincnn.optim import (AdamaxHyper, AdamaxState, adamax_step,
                            categorical_cross_entropy,
                            finite_difference_gradient, softmax,
                            softmax_cross_entropy_gradient)
from braincnn.rng import seeded_rng
from braincnn.train import (TrainConfig, early_stop_check,
                            classification_report, export_history,
                            load_checkpoint, save_checkpoint, train)
from conftest import max_rel_err


def report(name, ok, detail=""):
    print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
    assert ok, f"{name}: {detail}"


def test_criterion_1_gradient_fidelity():
    """Reduced CNN (2 blocks, 4/8 filters, 8x8x1, 4 classes, no dropout):
    backward matches central finite differences, rel err < 1e-4, < 60 s."""
    t0 = time.time()
    model = build_custom_cnn(input_shape=(8, 8, 1), class_count=4,
                             filters=(4, 8), dense_units=16, dropout_rate=0.0)
    pset = init_parameters(model, seeded_rng(0), dtype=np.float64)
    x = seeded_rng(1).random((2, 8, 8, 1))
    y = np.zeros((2, 4))
    y[0, 1] = y[1, 3] = 1
    frozen = {k: v.copy() for k, v in pset.buffers.items()}

    def loss_fn(_):
        for k in pset.buffers:
            pset.buffers[k][...] = frozen[k]
        p, _ = forward_pass(model, pset, x, "train")
        return categorical_cross_entropy(p, y)

    for k in pset.buffers:
        pset.buffers[k][...] = frozen[k]
    probs, caches = forward_pass(model, pset, x, "train")
    grads = backward_pass(model, pset, caches, (probs - y) / 2, from_logits=True)
    fd = finite_difference_gradient(loss_fn, pset.params, 1e-6)
    worst = max(max_rel_err(grads[k], fd[k]) for k in grads)
    elapsed = time.time() - t0
    report("criterion 1 (gradient fidelity)", worst < 1e-4 and elapsed < 60,
           f"max rel err {worst:.2e} over {sum(g.size for g in grads.values())} "
           f"params in {elapsed:.1f}s")


def test_criterion_2_optimizer_oracle():
    """100 steps match an independent scalar oracle within 1e-12; first-step
    magnitude equals alpha within 1e-9 for 1000 random gradients."""
    def oracle(theta, grads, alpha=0.001, b1=0.9, b2=0.999, eps=1e-7):
        m = u = 0.0
        out = []
        for t, g in enumerate(grads, 1):
            m = b1 * m + (1 - b1) * g
            u = max(b2 * u, abs(g))
            theta -= alpha * (m / (1 - b1 ** t)) / (u + eps)
            out.append(theta)
        return np.array(out)

    grads = seeded_rng(2).standard_normal(100)
    params = {"w": np.array([0.5])}
    state = AdamaxState.for_params(params)
    traj = []
    for g in grads:
        adamax_step(params, {"w": np.array([g])}, state, AdamaxHyper())
        traj.append(params["w"][0])
    err = np.abs(np.array(traj) - oracle(0.5, grads)).max()

    rng = seeded_rng(3)
    g1 = rng.uniform(0.5, 2.0, 1000) * np.where(rng.random(1000) < 0.5, -1, 1)
    p1 = {"w": np.zeros(1000)}
    adamax_step(p1, {"w": g1}, AdamaxState.for_params(p1), AdamaxHyper())
    step_err = np.abs(np.abs(p1["w"]) - 0.001).max()
    report("criterion 2 (optimizer oracle)", err < 1e-12 and step_err < 1e-9,
           f"oracle err {err:.2e}, first-step err {step_err:.2e}")


def test_criterion_3_loss_correctness():
    """Uniform loss = ln 4 within 1e-9; fused gradient matches finite
    differences within 1e-6."""
    probs = np.full((5, 4), 0.25)
    onehot = np.eye(4)[[0, 1, 2, 3, 0]]
    loss_err = abs(categorical_cross_entropy(probs, onehot) - np.log(4))

    logits = seeded_rng(4).standard_normal((3, 4))
    y = np.eye(4)[[1, 0, 2]]
    g = softmax_cross_entropy_gradient(logits, y)
    fd = finite_difference_gradient(
        lambda p: categorical_cross_entropy(softmax(p["z"]), y),
        {"z": logits.copy()}, 1e-6)
    grad_err = np.abs(g - fd["z"]).max()
    report("criterion 3 (loss correctness)", loss_err < 1e-9 and grad_err < 1e-6,
           f"ln4 err {loss_err:.2e}, fused grad err {grad_err:.2e}")


def test_criterion_4_desk_scale_learning(tmp_path):
    """Synthetic 4-class set (200/class, 64x64), filters 8/16/32/64:
    >= 95% train and >= 90% validation accuracy within 30 epochs, < 10 min;
    checkpointed epoch has the minimum validation loss."""
    t0 = time.time()
    root = tmp_path / "desk"
    make_fixtures(root, per_class=200, seed=7, size=64)
    idx = scan_dataset(root)
    tr, va, te = stratified_split(idx, SplitSpec(seed=5))
    model = build_custom_cnn(input_shape=(64, 64, 3), class_count=4,
                             filters=(8, 16, 32, 64), dense_units=64)
    config = TrainConfig(epochs=30, batch_size=32, image_size=64,
                         augment=AugmentParams(),
                         checkpoint_path=str(tmp_path / "desk.ckpt"))
    history, best = train(model, tr, va, config)
    elapsed = time.time() - t0
    best_train = max(r.train_acc for r in history.records)
    best_val = max(r.val_acc for r in history.records)
    ckpt_ok = np.isclose(history.records[history.best_epoch - 1].val_loss,
                         min(history.val_losses))
    report("criterion 4 (desk-scale learning)",
           best_train >= 0.95 and best_val >= 0.90 and elapsed < 600 and ckpt_ok,
           f"train acc {best_train:.3f}, val acc {best_val:.3f}, "
           f"{len(history.records)} epochs in {elapsed:.0f}s, "
           f"checkpoint at min val loss: {ckpt_ok}")


def test_criterion_5_early_stopping():
    """Scripted trace halts after epoch 7 with best epoch 2 — exact."""
    trace = [1.0, 0.9, 0.95, 0.96, 0.97, 0.98, 0.99]
    decisions = [early_stop_check(trace[:n], 5) for n in range(1, 8)]
    ok = decisions == ["continue"] * 6 + ["stop"] and int(np.argmin(trace)) == 1
    report("criterion 5 (early stopping)", ok, f"decisions {decisions}")


def test_criterion_6_split_arithmetic():
    """7,023 entries under 70/15/15 give 4916/1053/1054 within one sample
    per class, disjoint and covering."""
    from braincnn.data import DatasetIndex
    counts = [1757, 1757, 1755, 1754]
    entries = [(f"p{c}_{i}", c) for c, n in enumerate(counts) for i in range(n)]
    idx = DatasetIndex(entries, ["a", "b", "c", "d"])
    tr, va, te = stratified_split(idx, SplitSpec())
    k = 4
    sizes_ok = (abs(len(tr) - 4916) <= k and abs(len(va) - 1053) <= k
                and abs(len(te) - 1054) <= k)
    paths = [set(p for p, _ in part.entries) for part in (tr, va, te)]
    disjoint = sum(len(s) for s in paths) == 7023
    covering = set().union(*paths) == set(p for p, _ in entries)
    report("criterion 6 (split arithmetic)", sizes_ok and disjoint and covering,
           f"sizes {len(tr)}/{len(va)}/{len(te)}")


def test_criterion_7_metrics_arithmetic():
    """Report invariants exact on a hand-built tally; (18, 1431) -> 1.258%."""
    true = [0, 0, 0, 1, 1, 2, 2, 2, 3, 3]
    pred = [0, 1, 0, 1, 1, 2, 3, 2, 3, 0]
    confusion = np.zeros((4, 4), dtype=int)
    for t, p in zip(true, pred):
        confusion[t, p] += 1
    rep = classification_report(confusion, list("abcd"))
    invariants = (
        rep.confusion.sum() == 10
        and rep.accuracy == np.trace(confusion) / 10
        and rep.incorrect == 10 - np.trace(confusion)
        and abs(rep.incorrect_pct - 100 * rep.incorrect / 10) < 1e-12
    )
    table = classification_report(np.array([[1413, 18], [0, 0]]), ["t", "f"])
    table_ok = table.incorrect == 18 and round(table.incorrect_pct, 3) == 1.258
    report("criterion 7 (metrics arithmetic)", invariants and table_ok,
           f"incorrect_pct(18/1431) = {table.incorrect_pct:.3f}%")


def test_criterion_8_determinism(fixture_index, tmp_path):
    """Two identical train runs produce byte-identical history tables and
    checkpoints."""
    tr, va, _ = stratified_split(fixture_index, SplitSpec(seed=4))
    outputs = []
    for name in ("a", "b"):
        model = build_custom_cnn(input_shape=(16, 16, 3), class_count=4,
                                 filters=(4, 8), dense_units=16)
        config = TrainConfig(epochs=2, batch_size=8, image_size=16,
                             augment=AugmentParams(),
                             checkpoint_path=str(tmp_path / f"{name}.ckpt"))
        history, _ = train(model, tr, va, config)
        export_history(history, tmp_path / name)
        outputs.append((
            (tmp_path / name / "history.csv").read_bytes(),
            (tmp_path / f"{name}.ckpt").read_bytes()))
    ok = outputs[0] == outputs[1]
    report("criterion 8 (determinism)", ok,
           f"history {len(outputs[0][0])} B, checkpoint {len(outputs[0][1])} B")


def test_criterion_9_checkpoint_round_trip(fixture_index, tmp_path):
    """save->load is prediction-bit-identical; corrupted files raise typed
    errors rather than crashing."""
    tr, va, _ = stratified_split(fixture_index, SplitSpec(seed=4))
    model = build_custom_cnn(input_shape=(16, 16, 3), class_count=4,
                             filters=(4,), dense_units=8)
    config = TrainConfig(epochs=1, batch_size=8, image_size=16)
    _, best = train(model, tr, va, config)
    path = tmp_path / "rt.ckpt"
    save_checkpoint(best, path)
    loaded = load_checkpoint(path)
    x = seeded_rng(5).random((4, 16, 16, 3)).astype(np.float32)
    p1, _ = forward_pass(best.model, best.pset, x, "infer")
    p2, _ = forward_pass(loaded.model, loaded.pset, x, "infer")
    identical = np.array_equal(p1, p2)

    raw = path.read_bytes()
    typed = 0
    (tmp_path / "trunc.ckpt").write_bytes(raw[: len(raw) // 3])
    try:
        load_checkpoint(tmp_path / "trunc.ckpt")
    except CheckpointCorruptError:
        typed += 1
    (tmp_path / "magic.ckpt").write_bytes(b"XXXXXXXX" + raw[8:])
    try:
        load_checkpoint(tmp_path / "magic.ckpt")
    except CheckpointFormatError:
        typed += 1
    report("criterion 9 (checkpoint round-trip)", identical and typed == 2,
           f"bit-identical: {identical}, typed errors: {typed}/2")
