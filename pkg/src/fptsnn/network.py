"""Dense spiking networks trainable with sequential BPTT or the fixed-point solver.

Activations are ``(batch, features, T)``. Each dense layer feeds a layer of
neurons; the readout is either the output-layer spike count summed over time
or, for ``mean_membrane``, the time-averaged current of a non-spiking output
layer.
"""

from __future__ import annotations

import logging
import resource
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .backward import fpt_backward
from .data import Dataset
from .forward import FixedPointConfig, fpt_forward
from .kernels import DecayOperator, make_decay_operator
from .lif import LifParams, sequential_bptt_gradient, sequential_lif
from .neurons import (LOWER_TRIANGULAR, LearnableNeuronParams, fpt_generalized_backward,
                      fpt_generalized_forward)

log = logging.getLogger(__name__)

SEQUENTIAL = "sequential"
FPT = "fpt"
PSN = "psn"
PSU = "psu"
FPT_LEARNABLE = "fpt_learnable"
ENGINES = (SEQUENTIAL, FPT, PSN, PSU, FPT_LEARNABLE)
LEARNABLE_ENGINES = (PSN, PSU, FPT_LEARNABLE)

SPIKE_COUNT = "spike_count"
MEAN_MEMBRANE = "mean_membrane"
READOUTS = (SPIKE_COUNT, MEAN_MEMBRANE)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class NetworkSpec:
    layer_sizes: tuple
    neuron_engine: str = FPT
    lif: LifParams = field(default_factory=lambda: LifParams(lam=0.5, v_th=1.0))
    fpt: FixedPointConfig = field(default_factory=FixedPointConfig)
    readout: str = SPIKE_COUNT
    mask: str = LOWER_TRIANGULAR

    def __post_init__(self):
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"need at least 2 layers of positive size, got {self.layer_sizes}")
        if self.neuron_engine not in ENGINES:
            raise ValueError(f"unknown engine {self.neuron_engine!r}")
        if self.readout not in READOUTS:
            raise ValueError(f"unknown readout {self.readout!r}")

    def to_dict(self) -> dict:
        fpt = asdict(self.fpt)
        fpt["surrogate"]["alpha_forward"] = list(fpt["surrogate"]["alpha_forward"])
        return {"layer_sizes": list(self.layer_sizes), "neuron_engine": self.neuron_engine,
                "lif": asdict(self.lif), "fpt": fpt, "readout": self.readout, "mask": self.mask}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        from .forward import SurrogateConfig
        fpt = dict(d["fpt"])
        fpt["surrogate"] = SurrogateConfig(**fpt["surrogate"])
        return cls(layer_sizes=tuple(d["layer_sizes"]), neuron_engine=d["neuron_engine"],
                   lif=LifParams(**d["lif"]), fpt=FixedPointConfig(**fpt),
                   readout=d["readout"], mask=d.get("mask", LOWER_TRIANGULAR))


def _engine_cfg(engine: str, cfg: FixedPointConfig) -> FixedPointConfig:
    # PSN and PSU are the one- and two-iteration cases of the learnable solver
    if engine == PSN:
        return replace(cfg, k_max=1)
    if engine == PSU:
        return replace(cfg, k_max=2)
    return cfg


class Network:
    """Weights plus the NetworkSpec that says how to run them."""

    def __init__(self, spec: NetworkSpec, params: dict, timesteps: int):
        self.spec = spec
        self.params = params
        self.timesteps = int(timesteps)
        self._ops = {}

    @classmethod
    def init(cls, spec: NetworkSpec, timesteps: int, seed: int = 0,
             weight_scale: float = 0.5) -> "Network":
        rng = np.random.default_rng(seed)
        params = {}
        sizes = spec.layer_sizes
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = weight_scale * np.sqrt(6.0 / fan_in)
            params[f"W{i}"] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            params[f"b{i}"] = np.zeros(fan_out)
        if spec.neuron_engine in LEARNABLE_ENGINES:
            for i in range(cls._n_neuron_layers(spec)):
                p = LearnableNeuronParams.init(timesteps, spec.lif.lam, spec.lif.v_th,
                                               spec.mask, rng=rng)
                params[f"A{i}"], params[f"B{i}"] = p.a, p.b
        return cls(spec, params, timesteps)

    @staticmethod
    def _n_neuron_layers(spec: NetworkSpec) -> int:
        n = len(spec.layer_sizes) - 1
        return n - 1 if spec.readout == MEAN_MEMBRANE else n

    @property
    def n_layers(self) -> int:
        return len(self.spec.layer_sizes) - 1

    def copy(self) -> "Network":
        return Network(self.spec, {k: v.copy() for k, v in self.params.items()}, self.timesteps)

    def _lif_op(self, t: int) -> DecayOperator:
        key = ("lif", t)
        if key not in self._ops:
            self._ops[key] = make_decay_operator(t, self.spec.lif.lam, self.spec.fpt.kernel)
        return self._ops[key]

    def _learnable(self, i: int) -> LearnableNeuronParams:
        b = self.params[f"B{i}"]
        if self.spec.neuron_engine == PSU:
            b = np.full_like(b, self.spec.lif.v_th)
        return LearnableNeuronParams(self.params[f"A{i}"], b, self.spec.mask, self.spec.lif.v_th)

    def _neurons_forward(self, i: int, c: np.ndarray, engine: str):
        lif = self.spec.lif
        if engine == SEQUENTIAL:
            return sequential_lif(c, lif).s, None
        cfg = _engine_cfg(engine, self.spec.fpt)
        if engine == FPT:
            trace = fpt_forward(c, lif, cfg, op=self._lif_op(c.shape[-1]))
        else:
            if c.shape[-1] != self.timesteps:
                raise ValueError("learnable neurons are tied to the trained number of timesteps")
            trace = fpt_generalized_forward(c, self._learnable(i), cfg)
        return trace.s_star, trace

    def _neurons_backward(self, i, c, cache, upstream, engine, grads):
        lif, cfg = self.spec.lif, _engine_cfg(engine, self.spec.fpt)
        if engine == SEQUENTIAL:
            alpha_b = cfg.surrogate.alpha_backward(cfg.k_max)
            return sequential_bptt_gradient(c, lif, upstream, alpha_b)
        if engine == FPT:
            return fpt_backward(cache, upstream, lif, cfg, op=self._lif_op(c.shape[-1])).grad_c
        res = fpt_generalized_backward(cache, upstream, self._learnable(i), cfg)
        grads[f"A{i}"] = res.grad_A
        if engine != PSU:
            grads[f"B{i}"] = res.grad_B
        return res.grad_c

    def forward(self, x, engine: Optional[str] = None, keep=False):
        """Readout ``(batch, classes)``; with ``keep`` also the per-layer caches."""
        engine = engine or self.spec.neuron_engine
        h = np.asarray(x, dtype=np.float64)
        caches = []
        spikes = []
        for i in range(self.n_layers):
            c = self.params[f"W{i}"] @ h + self.params[f"b{i}"][None, :, None]
            if i == self.n_layers - 1 and self.spec.readout == MEAN_MEMBRANE:
                caches.append((h, c, None))
                readout = c.mean(axis=-1)
                break
            s, trace = self._neurons_forward(i, c, engine)
            caches.append((h, c, trace))
            spikes.append(s)
            h = s
        else:
            readout = h.sum(axis=-1)
        if keep:
            return readout, caches, spikes
        return readout

    def backward(self, d_readout, caches, engine: Optional[str] = None) -> dict:
        engine = engine or self.spec.neuron_engine
        grads = {}
        t = caches[-1][1].shape[-1]
        for i in range(self.n_layers - 1, -1, -1):
            h, c, trace = caches[i]
            if i == self.n_layers - 1:
                if self.spec.readout == MEAN_MEMBRANE:
                    dc = np.repeat(d_readout[:, :, None] / t, t, axis=-1)
                else:
                    ds = np.repeat(d_readout[:, :, None], t, axis=-1)
                    dc = self._neurons_backward(i, c, trace, ds, engine, grads)
            else:
                dc = self._neurons_backward(i, c, trace, dh, engine, grads)
            grads[f"W{i}"] = np.einsum("bot,bit->oi", dc, h)
            grads[f"b{i}"] = dc.sum(axis=(0, 2))
            if i > 0:
                dh = np.matmul(self.params[f"W{i}"].T, dc)
        return grads


def softmax_cross_entropy(logits, labels):
    """Mean loss and its gradient with respect to ``logits``."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


@dataclass
class TrainHyper:
    lr: float = 0.02
    epochs: int = 50
    batch: int = 32
    seed: int = 0
    loss: str = "cross_entropy"
    weight_scale: float = 0.5


@dataclass
class TrainReport:
    epoch_loss: list
    accuracy: float
    wall_clock_per_batch: float
    firing_rate: float
    seed: int
    engine: str
    peak_rss_delta_mb: float = 0.0

    def to_dict(self):
        return asdict(self)


def _peak_rss_mb() -> float:
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0


def train(spec: NetworkSpec, data: Dataset, hyper: TrainHyper = None,
          model: Optional[Network] = None):
    """Plain SGD on the dense weights (and ``A``/``B`` for learnable engines).

    Returns ``(model, report)``.
    """
    hyper = hyper or TrainHyper()
    if hyper.loss != "cross_entropy":
        raise ValueError(f"unknown loss {hyper.loss!r}")
    if data.features != spec.layer_sizes[0]:
        raise ValueError(f"data has {data.features} features, network expects {spec.layer_sizes[0]}")
    if data.classes > spec.layer_sizes[-1]:
        raise ValueError(f"data has {data.classes} classes, network has {spec.layer_sizes[-1]} outputs")
    if model is None:
        model = Network.init(spec, data.timesteps, hyper.seed, hyper.weight_scale)
    rng = np.random.default_rng(hyper.seed)
    rss0 = _peak_rss_mb()
    epoch_loss = []
    batch_times = []
    n = len(data)
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hyper.batch):
            idx = order[start:start + hyper.batch]
            t0 = time.perf_counter()
            readout, caches, _ = model.forward(data.inputs[idx], keep=True)
            loss, d_readout = softmax_cross_entropy(readout, data.labels[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} in epoch {epoch}")
            grads = model.backward(d_readout, caches)
            for name, g in grads.items():
                model.params[name] -= hyper.lr * g
            batch_times.append(time.perf_counter() - t0)
            total += loss * len(idx)
        epoch_loss.append(total / n)
        log.debug("epoch %d loss %.4f", epoch, epoch_loss[-1])
    if hyper.epochs:
        # keep the masked entries at exactly zero
        for i in range(model.n_layers):
            if f"A{i}" in model.params and spec.mask == LOWER_TRIANGULAR:
                model.params[f"A{i}"] = np.tril(model.params[f"A{i}"])
    report = TrainReport(
        epoch_loss=epoch_loss, accuracy=evaluate(model, data),
        wall_clock_per_batch=float(np.mean(batch_times)) if batch_times else 0.0,
        firing_rate=firing_rate(model, data), seed=hyper.seed, engine=spec.neuron_engine,
        peak_rss_delta_mb=_peak_rss_mb() - rss0)
    return model, report


def evaluate(model: Network, data: Dataset, engine: Optional[str] = None) -> float:
    readout = model.forward(data.inputs, engine=engine)
    return float(np.mean(np.argmax(readout, axis=1) == data.labels))


def firing_rate(model: Network, data: Dataset, engine: Optional[str] = None) -> float:
    """Mean spike density over every spiking layer, neuron and timestep."""
    _, _, spikes = model.forward(data.inputs, engine=engine, keep=True)
    if not spikes:
        return 0.0
    total = sum(float(s.sum()) for s in spikes)
    count = sum(s.size for s in spikes)
    return total / count


def spike_trains(model: Network, data: Dataset, engine: Optional[str] = None) -> list:
    return model.forward(data.inputs, engine=engine, keep=True)[2]


def output_cosine_similarity(model: Network, engine_a: str, engine_b: str, data: Dataset) -> float:
    """Mean cosine similarity between two engines' readouts over the dataset.

    Samples where either readout is the zero vector are skipped and counted in a warning.
    """
    ra = model.forward(data.inputs, engine=engine_a)
    rb = ra if engine_b == engine_a else model.forward(data.inputs, engine=engine_b)
    na = np.linalg.norm(ra, axis=1)
    nb = np.linalg.norm(rb, axis=1)
    ok = (na > 0) & (nb > 0)
    skipped = int(np.sum(~ok))
    if skipped:
        warnings.warn(f"{skipped} zero-vector readouts excluded from cosine similarity")
    if not np.any(ok):
        return float("nan")
    if engine_b == engine_a:
        return 1.0
    cos = np.sum(ra[ok] * rb[ok], axis=1) / (na[ok] * nb[ok])
    return float(np.mean(cos))
