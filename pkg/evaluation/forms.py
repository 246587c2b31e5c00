from dataclasses import dataclass

from django import forms

from .selection import PROTOCOLS


@dataclass(frozen=True)
class EvaluationConfig:
    budget_fraction: float
    protocol: str


class EvaluationForm(forms.Form):
    budget_fraction = forms.FloatField(help_text='Summary length as a fraction of the video frames')
    protocol = forms.ChoiceField(choices=[(protocol, protocol) for protocol in PROTOCOLS])

    def clean_budget_fraction(self):
        fraction = self.cleaned_data['budget_fraction']
        if not 0 < fraction <= 1:
            raise forms.ValidationError('must be in (0, 1]', code='range')
        return fraction

    def to_config(self):
        return EvaluationConfig(**self.cleaned_data)
