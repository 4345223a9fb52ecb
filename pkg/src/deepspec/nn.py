"""Parameter initialisation and the small set of layers the models need."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, conv2d, conv2d_transpose, matmul


def he_uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


def zeros(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def linear_params(rng, fan_in, fan_out):
    return he_uniform(rng, (fan_in, fan_out), fan_in), zeros((fan_out,))


def conv_params(rng, in_channels, out_channels, kernel):
    fan_in = in_channels * kernel * kernel
    return he_uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in), zeros((out_channels,))


def linear(x, weight, bias):
    return matmul(x, weight) + bias


def conv(x, weight, bias, stride, padding):
    return conv2d(x, weight, stride, padding) + bias.reshape(1, -1, 1, 1)


def deconv(x, weight, bias, stride, padding, output_padding):
    return conv2d_transpose(x, weight, stride, padding, output_padding) + bias.reshape(1, -1, 1, 1)
