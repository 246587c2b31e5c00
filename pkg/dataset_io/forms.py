"""
Forms validating the ``dataset`` configuration section.
"""
from dataclasses import dataclass

from django import forms


@dataclass(frozen=True)
class DatasetConfig:
    fps: float
    fallback_shot_seconds: float
    frame_stride: int

    @property
    def fallback_shot_len(self) -> int:
        return max(1, int(round(self.fallback_shot_seconds * self.fps)))


class DatasetForm(forms.Form):
    """Sampling rate and shot fallback used when reading datasets."""

    fps = forms.FloatField(
        min_value=1e-6,
        help_text='Frames per second after sampling'
    )
    fallback_shot_seconds = forms.FloatField(
        min_value=1e-6,
        help_text='Length of synthesized shots when a dataset ships no boundaries'
    )
    frame_stride = forms.IntegerField(min_value=1)

    def to_config(self):
        return DatasetConfig(**self.cleaned_data)
