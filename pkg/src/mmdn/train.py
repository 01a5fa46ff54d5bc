"""Classifier training driven by a RunConfig: epoch loop, schedule, logging,
checkpoints, and resume."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import checkpoint, data, engine
from .baselines import build_baseline
from .config import RunConfig
from .densenet import MultimodalDenseNetConfig, build_densenet, build_mmdensenet
from .metrics import ConfusionMatrix, compute_report
from .optim import SGD, Adam, AdamConfig, SgdConfig, resolve_schedule


def build_model_from_config(cfg: RunConfig, dtype="single"):
    m = cfg.model
    seed = cfg.train.seed
    if m.kind in ("mmdensenet", "densenet"):
        net_cfg = MultimodalDenseNetConfig(
            num_classes=m.num_classes, image_size=m.image_size,
            growth_rate=m.growth_rate, block_layers=list(m.block_layers),
            compression=m.compression, modality_a_channels=3,
            modality_b_channels=cfg.modality_b_channels, dropout_rate=m.dropout)
        builder = build_mmdensenet if m.kind == "mmdensenet" else build_densenet
        return builder(net_cfg, dtype=dtype, seed=seed)
    return build_baseline(m.kind, m.num_classes, m.image_size,
                          modality_a_channels=3,
                          modality_b_channels=cfg.modality_b_channels,
                          dtype=dtype, seed=seed)


def make_optimizer(model, cfg: RunConfig, lr: float):
    t = cfg.train
    if t.optimizer == "sgd":
        opt = SGD(model.registry, SgdConfig(lr=lr, momentum=t.momentum,
                                            weight_decay=t.weight_decay))
    else:
        opt = Adam(model.registry, AdamConfig(lr=lr, beta1=0.9, beta2=0.999))
    return opt


def evaluate(model, xa, xb, y, batch_size: int = 64) -> ConfusionMatrix:
    num_classes = model.cfg.num_classes if hasattr(model, "cfg") else model.num_classes
    cm = ConfusionMatrix(num_classes)
    for s in range(0, len(y), batch_size):
        logits = model.predict_logits(xa[s:s + batch_size],
                                      xb[s:s + batch_size] if xb is not None else None)
        cm.accumulate_batch(y[s:s + batch_size], logits.argmax(axis=1))
    return cm


def evaluate_report(model, xa, xb, y, batch_size: int = 64):
    return compute_report(evaluate(model, xa, xb, y, batch_size))


def train_run(cfg: RunConfig, resume: str | None = None,
              deterministic: bool = False, quiet: bool = False) -> dict:
    """Train per config; returns a summary dict with paths and final stats.

    Writes metrics.csv (epoch, lr, train_loss, val_error), best.ckpt,
    final.ckpt, and final.state.ckpt (optimizer state + epoch counter) under
    the configured output dir.
    """
    out_dir = Path(cfg.output.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t = cfg.train

    manifest = data.DatasetManifest.load(cfg.data.root)
    splits = data.split_dataset(manifest, t.seed)
    xa_tr, xb_tr, y_tr = data.load_split_arrays(manifest, splits["train"])
    xa_va, xb_va, y_va = data.load_split_arrays(manifest, splits["val"])

    model = build_model_from_config(cfg)
    schedule = resolve_schedule(t.schedule, t.epochs)
    if schedule.total_epochs < t.epochs:
        raise ValueError(
            f"schedule covers {schedule.total_epochs} epochs < train.epochs {t.epochs}")
    opt = make_optimizer(model, cfg, schedule.lr_at_epoch(0))

    start_epoch = 0
    best_val_error = np.inf
    if resume is not None:
        checkpoint_arrays = checkpoint.read_arrays(resume)
        model.registry.load_values(checkpoint_arrays)
        state_path = Path(str(resume) + ".state")
        if state_path.exists():
            state = checkpoint.read_arrays(state_path)
            start_epoch = int(state["meta.epoch"][0])
            best_val_error = float(state["meta.best_val_error"][0])
            opt.load_state(state)

    rows = []
    for epoch in range(start_epoch, t.epochs):
        lr = schedule.lr_at_epoch(epoch)
        opt.lr = lr
        model.reseed_dropout(t.seed, epoch)
        losses = []
        for batch in data.batch_iter(list(range(len(y_tr))), t.batch_size,
                                     shuffle=True, seed=t.seed, epoch=epoch):
            idx = np.asarray(batch)
            xa = engine.constant(xa_tr[idx])
            xb = engine.constant(xb_tr[idx]) if model.multimodal else None
            logits = model.forward(xa, xb, mode="train")
            loss = engine.softmax_cross_entropy(logits, y_tr[idx])
            opt.zero_grad()
            engine.backward(loss)
            opt.step()
            losses.append(float(loss.value))
        val_cm = evaluate(model, xa_va, xb_va if model.multimodal else None, y_va)
        val_error = 1.0 - float(np.trace(val_cm.counts) / val_cm.total)
        rows.append((epoch, lr, float(np.mean(losses)), val_error))
        if not quiet:
            print(f"epoch {epoch}: lr {lr:g} train_loss {np.mean(losses):.4f} "
                  f"val_error {val_error:.4f}")
        if val_error < best_val_error:
            best_val_error = val_error
            checkpoint.save_checkpoint(model.registry, out_dir / "best.ckpt")
        if 1.0 - val_error >= t.early_stop_val_acc:
            break

    with open(out_dir / "metrics.csv", "w") as fh:
        fh.write("epoch,lr,train_loss,val_error\n")
        for row in rows:
            fh.write(f"{row[0]},{row[1]!r},{row[2]!r},{row[3]!r}\n")

    checkpoint.save_checkpoint(model.registry, out_dir / "final.ckpt")
    final_epoch = rows[-1][0] + 1 if rows else start_epoch
    state_items = [("meta.epoch", np.asarray([float(final_epoch)])),
                   ("meta.best_val_error", np.asarray([best_val_error]))]
    state_items += opt.state_arrays()
    checkpoint.write_arrays(out_dir / "final.ckpt.state", state_items)

    from .config import emit_config
    (out_dir / "config.effective").write_text(emit_config(cfg))
    return {"model": model, "rows": rows, "best_val_error": best_val_error,
            "out_dir": str(out_dir)}
