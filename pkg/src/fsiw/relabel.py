"""Counterfactual-deadline relabeling.

To learn how often a snapshot label is still wrong, we replay labeling with a
deadline pulled ``tau`` seconds earlier: any sample whose click is too recent
to have had a full ``tau`` of observation is dropped, and the rest get an
"was this label already correct at the earlier deadline" indicator ``s``.
Positives (eventual converters among the kept window) land in D1; D0 holds
the samples that looked negative at the earlier deadline.
"""

from __future__ import annotations

from dataclasses import dataclass

from .data import FeatureVector, LabeledSample


class ConfigError(ValueError):
    """A relabeling/experiment configuration violates its invariants."""


@dataclass(frozen=True)
class RelabelConfig:
    """tau: how far before training_end the counterfactual deadline sits."""

    tau: int
    training_end: int

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.tau >= self.training_end:
            raise ConfigError("tau must leave a non-empty window before training_end")

    @property
    def cutoff(self) -> int:
        """The counterfactual deadline itself (training_end - tau)."""
        return self.training_end - self.tau


@dataclass(frozen=True)
class ArtificialSample:
    """One relabeled sample.

    e_adj is the elapsed time measured at the counterfactual deadline; e keeps
    the original snapshot elapsed time because downstream weight assignment
    predicts with the original value.
    """

    x: FeatureVector
    e_adj: int
    s: int
    destination: str
    e: int

    def __post_init__(self):
        if self.e_adj <= 0:
            raise ValueError(f"adjusted elapsed time must be positive, got {self.e_adj}")
        if self.s not in (0, 1):
            raise ValueError(f"s must be 0 or 1, got {self.s}")
        if self.destination not in ("D1", "D0"):
            raise ValueError(f"destination must be D1 or D0, got {self.destination!r}")


def build_artificial_datasets(
    train: list[LabeledSample], cfg: RelabelConfig
) -> tuple[list[ArtificialSample], list[ArtificialSample]]:
    """Split snapshot-labeled samples into the two weight-model training sets.

    With cutoff = training_end - tau:
      * clicks at or after the cutoff are excluded entirely;
      * a positive goes to D1 with s=1 if it converted strictly before the
        cutoff, else with s=0 — and in the latter case also to D0 with s=0
        (at the earlier deadline it still looked negative);
      * a negative goes to D0 with s=1.
    Every kept sample's adjusted elapsed time is e - tau, which the click
    filter keeps positive. Output preserves input order.
    """
    cutoff = cfg.cutoff
    d1: list[ArtificialSample] = []
    d0: list[ArtificialSample] = []
    for sample in train:
        if sample.click_ts >= cfg.training_end:
            raise ValueError(
                f"sample clicked at {sample.click_ts}, after training_end {cfg.training_end}"
            )
        if sample.click_ts >= cutoff:
            continue
        e_adj = sample.e - cfg.tau
        if sample.y == 1:
            converted_early = sample.click_ts + sample.d < cutoff
            s = 1 if converted_early else 0
            d1.append(ArtificialSample(x=sample.x, e_adj=e_adj, s=s, destination="D1", e=sample.e))
            if not converted_early:
                d0.append(ArtificialSample(x=sample.x, e_adj=e_adj, s=0, destination="D0", e=sample.e))
        else:
            d0.append(ArtificialSample(x=sample.x, e_adj=e_adj, s=1, destination="D0", e=sample.e))
    return d1, d0
