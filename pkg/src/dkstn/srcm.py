"""Spatial feature extraction over each daily frame.

A strided entry convolution maps the raw channels onto a feature grid, a
stack of residual 3x3 convolutions refines it (each layer adds its
convolution back onto its input before the rectifier), and a flatten plus
optional learned projection produces the per-day feature vector fed to the
temporal module. One weight set is shared by every frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .tensor import Tensor, add, conv2d, matmul, relu, reshape, transpose


@dataclass(frozen=True)
class SrcmConfig:
    layer_count: int = 7
    first_kernel: int = 7
    residual_kernel: int = 3
    channels: int = 16
    first_stride: int = 2
    projection_dim: int = 256
    learned_projection: bool = True

    def __post_init__(self):
        if self.layer_count < 2:
            raise ParameterError(f"need at least 2 layers, got {self.layer_count}")
        if self.first_kernel % 2 == 0 or self.residual_kernel % 2 == 0:
            raise ParameterError(
                f"kernels must be odd, got {self.first_kernel} and {self.residual_kernel}"
            )
        if self.channels < 1 or self.first_stride < 1 or self.projection_dim < 1:
            raise ParameterError("channels, stride, projection_dim must be positive")

    def spatial_shape(self, lat: int, lon: int) -> tuple:
        pad = self.first_kernel // 2
        h = (lat + 2 * pad - self.first_kernel) // self.first_stride + 1
        w = (lon + 2 * pad - self.first_kernel) // self.first_stride + 1
        return h, w

    def flat_dim(self, lat: int, lon: int) -> int:
        h, w = self.spatial_shape(lat, lon)
        return h * w * self.channels

    def output_dim(self, lat: int, lon: int) -> int:
        return self.projection_dim if self.learned_projection else self.flat_dim(lat, lon)


class SrcmWeights:
    """Convolution kernels/biases plus the flatten projection."""

    def __init__(self, kernels, biases, proj_w, proj_b):
        self.kernels = kernels
        self.biases = biases
        self.proj_w = proj_w
        self.proj_b = proj_b

    @classmethod
    def initialize(
        cls,
        config: SrcmConfig,
        in_channels: int,
        lat: int,
        lon: int,
        rng: np.random.Generator,
    ) -> "SrcmWeights":
        def uniform(shape, fan_in):
            bound = np.sqrt(1.0 / fan_in)
            return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

        c = config.channels
        kf = config.first_kernel
        kr = config.residual_kernel
        kernels = [uniform((c, in_channels, kf, kf), in_channels * kf * kf)]
        biases = [Tensor(np.zeros(c), requires_grad=True)]
        for _ in range(config.layer_count - 1):
            kernels.append(uniform((c, c, kr, kr), c * kr * kr))
            biases.append(Tensor(np.zeros(c), requires_grad=True))
        proj_w = proj_b = None
        if config.learned_projection:
            flat = config.flat_dim(lat, lon)
            proj_w = uniform((flat, config.projection_dim), flat)
            proj_b = Tensor(np.zeros(config.projection_dim), requires_grad=True)
        return cls(kernels, biases, proj_w, proj_b)

    def named(self, prefix: str = "srcm/") -> dict:
        params = {}
        for i, (k, b) in enumerate(zip(self.kernels, self.biases)):
            params[f"{prefix}conv{i:02d}/kernel"] = k
            params[f"{prefix}conv{i:02d}/bias"] = b
        if self.proj_w is not None:
            params[f"{prefix}proj/w"] = self.proj_w
            params[f"{prefix}proj/b"] = self.proj_b
        return params


def _forward_frames(x: Tensor, config: SrcmConfig, weights: SrcmWeights) -> Tensor:
    """Core stack on (N, channels, lat, lon) frames; returns (N, output_dim)."""
    c = config.channels
    z = conv2d(x, weights.kernels[0], stride=config.first_stride, padding=config.first_kernel // 2)
    z = add(z, reshape(weights.biases[0], (c, 1, 1)))
    pad = config.residual_kernel // 2
    for kernel, bias in zip(weights.kernels[1:], weights.biases[1:]):
        branch = add(conv2d(z, kernel, stride=1, padding=pad), reshape(bias, (c, 1, 1)))
        z = relu(add(z, branch))
    flat = reshape(z, (x.shape[0], -1))
    if not config.learned_projection:
        return flat
    return add(matmul(flat, weights.proj_w), weights.proj_b)


def srcm_forward(x: Tensor, config: SrcmConfig, weights: SrcmWeights) -> Tensor:
    """Feature vector for one (channels, lat, lon) frame."""
    out = _forward_frames(reshape(x, (1,) + x.shape), config, weights)
    return reshape(out, (out.shape[-1],))


def srcm_forward_batch(x: Tensor, config: SrcmConfig, weights: SrcmWeights) -> Tensor:
    """Features for a (M, k, lat, lon, channels) batch; frames are independent.

    Returns (M, k, output_dim).
    """
    m, k = x.shape[0], x.shape[1]
    frames = reshape(transpose(x, (0, 1, 4, 2, 3)), (m * k,) + (x.shape[4], x.shape[2], x.shape[3]))
    feats = _forward_frames(frames, config, weights)
    return reshape(feats, (m, k, feats.shape[-1]))
