"""Additive Gaussian noise with counter-addressed, reproducible streams.

Every draw is addressed by (seed, draw_index): the pair is hashed into a
Philox key, so any draw can be regenerated in isolation and evaluation order
never matters.  Standard normals come from Box-Muller applied to the uniform
counter stream.

Sigma is quoted on the 0-255 intensity scale and divided by 255 internally,
since frames live in [0, 1].
"""

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np


def stream_key(domain: str, seed: int, draw_index: int) -> int:
    """128-bit Philox key for one addressed draw, stable across platforms."""
    raw = f"{domain}|{seed}|{draw_index}".encode()
    return int.from_bytes(hashlib.blake2b(raw, digest_size=16).digest(), "little")


def _uniforms(n: int, domain: str, seed: int, draw_index: int) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(key=stream_key(domain, seed,
                                                              draw_index)))
    return gen.random(n)


def standard_normal_field(shape, seed: int, draw_index: int,
                          domain: str = "noise") -> np.ndarray:
    """iid N(0,1) field, deterministic in (domain, seed, draw_index)."""
    n = int(np.prod(shape))
    pairs = (n + 1) // 2
    u = _uniforms(2 * pairs, domain, seed, draw_index)
    u1, u2 = u[:pairs], u[pairs:]
    # Box-Muller; 1 - u1 keeps the log argument in (0, 1].
    r = np.sqrt(-2.0 * np.log1p(-u1))
    theta = 2.0 * np.pi * u2
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
    return z.reshape(shape)


def uniform_ints(low: int, high: int, count: int, seed: int, draw_index: int,
                 domain: str = "ints") -> np.ndarray:
    """``count`` iid integers in [low, high], inclusive, counter-addressed."""
    u = _uniforms(count, domain, seed, draw_index)
    return low + np.minimum((u * (high - low + 1)).astype(np.int64),
                            high - low)


@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian corruption: std ``sigma255`` on the 0-255 scale."""

    kind: str = "gaussian"
    sigma255: float = 25.0
    seed: int = 0

    def __post_init__(self):
        if self.kind != "gaussian":
            raise ValueError(f"unsupported noise kind {self.kind!r}")
        if self.sigma255 < 0:
            raise ValueError(f"sigma255 must be >= 0, got {self.sigma255}")

    @property
    def sigma(self) -> float:
        """Std on the [0, 1] frame scale."""
        return self.sigma255 / 255.0

    def to_json(self) -> dict:
        return {"kind": self.kind, "sigma255": self.sigma255, "seed": self.seed}

    @classmethod
    def from_json(cls, obj) -> "NoiseSpec":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(kind=obj["kind"], sigma255=float(obj["sigma255"]),
                   seed=int(obj["seed"]))


def add_noise(frame: np.ndarray, spec: NoiseSpec, draw_index: int) -> np.ndarray:
    """frame + iid Gaussian noise.  Not clamped: the noise must stay zero-mean."""
    frame = np.asarray(frame, dtype=np.float64)
    if spec.sigma255 == 0.0:
        return frame.copy()
    field = standard_normal_field(frame.shape, spec.seed, draw_index)
    return frame + spec.sigma * field


@dataclass(frozen=True)
class VarianceReport:
    """Measured residual noise after averaging T independent restorations."""

    n_frames: int
    input_sigma: float
    residual_sigma: float
    averaged_sigma: float

    def to_json(self) -> dict:
        return {"n_frames": self.n_frames, "input_sigma": self.input_sigma,
                "residual_sigma": self.residual_sigma,
                "averaged_sigma": self.averaged_sigma}


def variance_reduction_oracle(clean: np.ndarray, spec: NoiseSpec, T: int,
                              residual_model: float | None = None) -> VarianceReport:
    """Monte-Carlo check that averaging T independent noisy views of the same
    content shrinks the noise std by 1/sqrt(T).

    With ``residual_model`` set, the T views carry that residual std instead
    of the corruption std, modelling restorations that each left a small
    independent remnant of noise behind.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    clean = np.asarray(clean, dtype=np.float64)
    sigma_eff = spec.sigma if residual_model is None else float(residual_model)
    domain = "noise" if residual_model is None else "residual"
    acc = np.zeros_like(clean)
    for t in range(T):
        field = standard_normal_field(clean.shape, spec.seed, t, domain=domain)
        acc += clean + sigma_eff * field
    acc /= T
    averaged = float(np.std(acc - clean))
    return VarianceReport(n_frames=T, input_sigma=spec.sigma,
                          residual_sigma=(math.nan if residual_model is None
                                          else float(residual_model)),
                          averaged_sigma=averaged)
