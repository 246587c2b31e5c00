from django import forms

from .bridge import ENCODER_NAMES, EncoderConfig


class EncoderForm(forms.Form):
    """Which frozen encoder to use and how to seed the stub."""

    name = forms.ChoiceField(choices=[(name, name) for name in ENCODER_NAMES])
    embed_dim = forms.IntegerField(min_value=1)
    logit_scale = forms.FloatField(
        min_value=1e-6,
        help_text='Temperature applied to image-text cosine similarities'
    )
    seed = forms.IntegerField()
    weights_path = forms.CharField(required=False, empty_value='')

    def to_config(self):
        return EncoderConfig(**self.cleaned_data)
