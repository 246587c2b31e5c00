from django import forms

from .losses import LossWeights


class LossWeightsForm(forms.Form):
    beta_giou = forms.FloatField(min_value=0.0)
    beta_cls = forms.FloatField(min_value=0.0)
    beta_ec = forms.FloatField(min_value=0.0)
    beta_pred = forms.FloatField(min_value=0.0)
    beta_cap = forms.FloatField(min_value=0.0)
    beta_prior = forms.FloatField(min_value=0.0)
    beta_len = forms.FloatField(min_value=0.0)
    beta_var = forms.FloatField(min_value=0.0)
    target_length = forms.FloatField(help_text='Target mean score l of the length regulariser')

    def clean_target_length(self):
        target_length = self.cleaned_data['target_length']
        if not 0 < target_length < 1:
            raise forms.ValidationError('must be in (0, 1)', code='range')
        return target_length

    def to_config(self):
        return LossWeights(**self.cleaned_data)
