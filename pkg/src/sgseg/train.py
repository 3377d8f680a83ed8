"""Training loop with per-epoch logs, checkpoints, NaN abort and exact resume."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from sgseg import checkpoint
from sgseg.autodiff import Tape
from sgseg.config import RunConfig, from_dict
from sgseg.data import MultiModalSample, stack_batch
from sgseg.errors import ConfigError, NumericError
from sgseg.model import SegmentationModel, compute_losses
from sgseg.optim import Adam, learning_rate

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "lr", "L_c_inner", "L_c_final", "L_b_inner", "L_b_final", "total", "frame_acc")


def format_log(entry: dict) -> str:
    parts = [f"epoch={entry['epoch']}"]
    parts += [f"{k}={entry[k]:.8g}" for k in LOG_FIELDS[1:]]
    return " ".join(parts)


def batches(samples: Sequence[MultiModalSample], batch_size: int, rng: np.random.Generator):
    """Shuffled batches; each batch holds samples of a single length."""
    buckets: dict[int, list[MultiModalSample]] = {}
    for i in rng.permutation(len(samples)):
        s = samples[int(i)]
        bucket = buckets.setdefault(s.length, [])
        bucket.append(s)
        if len(bucket) == batch_size:
            yield bucket
            buckets[s.length] = []
    for length in sorted(buckets):
        if buckets[length]:
            yield buckets[length]


@dataclass
class DatasetInfo:
    channels: dict[str, int]
    num_classes: int
    null_label: int
    class_names: list[str]

    @classmethod
    def from_samples(cls, samples: Sequence[MultiModalSample]) -> "DatasetInfo":
        if not samples:
            raise ConfigError("empty dataset")
        first = samples[0]
        channels = {m: int(s.values.shape[-1]) for m, s in first.streams.items()}
        return cls(channels, len(first.class_names), first.null_label, list(first.class_names))


class Trainer:
    def __init__(self, cfg: RunConfig, info: DatasetInfo, out_dir: str | Path | None = None,
                 echo: Callable[[str], None] | None = None):
        self.cfg = cfg
        self.info = info
        self.model = SegmentationModel(cfg, info.channels, info.num_classes)
        self.names = [n for n, _ in self.model.named_parameters()]
        self.optimizer = Adam(self.model.parameters(), cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)
        self.epoch = 0
        self.history: list[dict] = []
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.echo = echo
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)

    # state

    def state(self) -> tuple[dict[str, np.ndarray], dict]:
        tensors = {}
        for name, p, m, v in zip(self.names, self.optimizer.params, self.optimizer.m, self.optimizer.v):
            tensors[f"param/{name}"] = p.data
            tensors[f"adam_m/{name}"] = m
            tensors[f"adam_v/{name}"] = v
        header = {
            "config": self.cfg.to_dict(),
            "epoch": self.epoch,
            "adam_steps": self.optimizer.steps,
            "channels": self.info.channels,
            "num_classes": self.info.num_classes,
            "null_label": self.info.null_label,
            "class_names": self.info.class_names,
            "history": self.history,
        }
        return {k: np.array(v, copy=True) for k, v in tensors.items()}, header

    def save(self, path: str | Path, state=None) -> Path:
        tensors, header = state if state is not None else self.state()
        return checkpoint.save(path, tensors, header)

    @classmethod
    def from_checkpoint(cls, path: str | Path, out_dir=None, echo=None, **overrides) -> "Trainer":
        tensors, header = checkpoint.load(path)
        cfg = from_dict({**header["config"], **overrides})
        info = DatasetInfo(header["channels"], header["num_classes"], header["null_label"], header["class_names"])
        trainer = cls(cfg, info, out_dir, echo)
        trainer.model.load_state_dict({n: tensors[f"param/{n}"] for n in trainer.names})
        trainer.optimizer.load_state(
            header["adam_steps"],
            [tensors[f"adam_m/{n}"] for n in trainer.names],
            [tensors[f"adam_v/{n}"] for n in trainer.names],
        )
        trainer.epoch = int(header["epoch"])
        trainer.history = list(header.get("history", []))
        return trainer

    # training

    def check_data(self, samples: Sequence[MultiModalSample]) -> None:
        info = DatasetInfo.from_samples(samples)
        if info.num_classes != self.info.num_classes:
            raise ConfigError(f"dataset has {info.num_classes} classes, model expects {self.info.num_classes}")
        for m in self.cfg.modalities:
            if info.channels.get(m) != self.info.channels.get(m):
                raise ConfigError(f"modality {m}: dataset has {info.channels.get(m)} channels, "
                                  f"model expects {self.info.channels.get(m)}")

    def run_epoch(self, samples: Sequence[MultiModalSample], epoch: int) -> dict:
        cfg = self.cfg
        lr = learning_rate(epoch, cfg.lr, cfg.warmup_epochs, cfg.decay_every, cfg.decay_factor, cfg.lr_schedule)
        rng = np.random.default_rng([cfg.seed, epoch])
        sums = dict.fromkeys(LOG_FIELDS[2:7], 0.0)
        correct = counted = total_samples = 0
        null = self.info.null_label
        for group in batches(samples, cfg.batch_size, rng):
            batch, labels = stack_batch(group, cfg.modalities)
            with Tape() as tape:
                outputs = self.model(batch)
                losses = compute_losses(self.model, outputs, labels, null)
            if not np.isfinite(losses.values["total"]):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            tape.backward(losses.total)
            self.optimizer.step(lr)
            for k in sums:
                sums[k] += losses.values[k] * len(group)
            total_samples += len(group)
            pred = outputs.class_logits.data.argmax(-1)
            keep = labels != null
            correct += int((pred[keep] == labels[keep]).sum())
            counted += int(keep.sum())
        entry = {"epoch": epoch, "lr": lr}
        entry.update({k: v / total_samples for k, v in sums.items()})
        entry["frame_acc"] = correct / counted if counted else 0.0
        return entry

    def fit(self, samples: Sequence[MultiModalSample], epochs: int | None = None) -> list[dict]:
        """Train until ``epochs`` (default: the configured count) have completed."""
        self.check_data(samples)
        target = self.cfg.epochs if epochs is None else epochs
        out = self.out_dir
        if out is not None:
            (out / "config.json").write_text(json.dumps(self.cfg.to_dict(), indent=2, sort_keys=True) + "\n")
        last_good = self.state()
        while self.epoch < target:
            epoch = self.epoch + 1
            try:
                entry = self.run_epoch(samples, epoch)
            except NumericError as exc:
                where = ""
                if out is not None:
                    where = f"; last good state (epoch {self.epoch}) saved to {self.save(out / 'last_good.ckpt', last_good)}"
                raise NumericError(f"{exc}{where}") from None
            self.epoch = epoch
            self.history.append(entry)
            line = format_log(entry)
            if self.echo is not None:
                self.echo(line)
            log.info(line)
            last_good = self.state()
            if out is not None:
                with open(out / "train.log", "a") as fh:
                    fh.write(line + "\n")
                if self.cfg.checkpoint_every and epoch % self.cfg.checkpoint_every == 0:
                    self.save(out / f"epoch_{epoch:04d}.ckpt", last_good)
        if out is not None:
            self.save(out / "model.ckpt", last_good)
            write_loss_curve(out / "loss_curve.csv", self.history)
        return self.history


def write_loss_curve(path: Path, history: Sequence[dict]) -> None:
    lines = [",".join(LOG_FIELDS)]
    lines += [",".join(f"{entry[k]:.8g}" if k != "epoch" else str(entry[k]) for k in LOG_FIELDS) for entry in history]
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path: str | Path) -> tuple[SegmentationModel, DatasetInfo, RunConfig]:
    tensors, header = checkpoint.load(path)
    cfg = from_dict(header["config"])
    info = DatasetInfo(header["channels"], header["num_classes"], header["null_label"], header["class_names"])
    model = SegmentationModel(cfg, info.channels, info.num_classes)
    model.load_state_dict({n: tensors[f"param/{n}"] for n, _ in model.named_parameters()})
    return model, info, cfg
