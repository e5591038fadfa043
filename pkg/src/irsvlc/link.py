"""Receiver-side link budget: composite gain, SNR and branch selection."""
from __future__ import annotations

import numpy as np
from pydantic import BaseModel, ConfigDict, Field


class NoiseModel(BaseModel):
    """Aggregate receiver noise, sigma^2 = noise_psd * bandwidth (A^2)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    noise_psd_a2_per_hz: float = Field(1e-21, gt=0)
    bandwidth_hz: float = Field(20e6, gt=0)

    @property
    def variance(self) -> float:
        return self.noise_psd_a2_per_hz * self.bandwidth_hz


def branch_gains(tensor, user, ap, assigned_mirrors=(), blockage=1):
    """Composite DC gain of every ADR branch of ``user`` towards ``ap``."""
    g = blockage * tensor.los[user, :, ap] + tensor.diff[user, :, ap]
    mirrors = list(assigned_mirrors)
    if mirrors:
        g = g + tensor.irs[user, :, ap][:, mirrors].sum(axis=1)
    return g


def received_gain(tensor, user, branch, ap, assigned_mirrors=(), blockage=1) -> float:
    """``O * h_los + h_diff + sum of the assigned mirror gains`` for one branch.

    Blockage only gates the line-of-sight term.
    """
    if blockage not in (0, 1):
        raise ValueError("blockage bit must be 0 or 1")
    return float(branch_gains(tensor, user, ap, assigned_mirrors, blockage)[branch])


def photocurrent(gain, p_t_w, responsivity):
    return responsivity * p_t_w * np.asarray(gain, dtype=float)


def snr(gain, p_t_w, responsivity, noise: NoiseModel):
    """Electrical SNR of an IM/DD link: (R * P_t * h)^2 / (N0 * B)."""
    i = photocurrent(gain, p_t_w, responsivity)
    out = i * i / noise.variance
    return float(out) if np.ndim(out) == 0 else out


def spectral_efficiency(snr_linear):
    out = np.log2(1.0 + np.asarray(snr_linear, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def best_branch(tensor, user, ap, assigned_mirrors=(), blockage=1):
    """Select-best combining: ``(branch, gain)`` of the strongest branch.

    Ties resolve to the lowest branch index.
    """
    g = branch_gains(tensor, user, ap, assigned_mirrors, blockage)
    b = int(np.argmax(g))
    return b, float(g[b])
