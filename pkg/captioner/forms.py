from django import forms

from .model import CaptionerConfig


class CaptionerConfigForm(forms.Form):
    """Captioner shape, matcher weights and decoding threshold."""

    num_queries = forms.IntegerField(min_value=1, help_text='Number of event queries N')
    max_caption_len = forms.IntegerField(min_value=1)
    embed_dim = forms.IntegerField(min_value=1)
    enc_layers = forms.IntegerField(min_value=1)
    dec_layers = forms.IntegerField(min_value=1)
    num_heads = forms.IntegerField(min_value=1)
    dropout = forms.FloatField(min_value=0.0, max_value=0.999)
    max_event_count = forms.IntegerField(
        min_value=0,
        required=False,
        help_text='Largest event count class; defaults to num_queries'
    )
    match_giou_weight = forms.FloatField(min_value=0.0)
    match_cls_weight = forms.FloatField(min_value=0.0)
    confidence_threshold = forms.FloatField(min_value=0.0, max_value=1.0)
    vocab_min_count = forms.IntegerField(min_value=1)

    def clean(self):
        cleaned_data = super().clean()
        embed_dim = cleaned_data.get('embed_dim')
        num_heads = cleaned_data.get('num_heads')
        if embed_dim and num_heads and embed_dim % num_heads:
            self.add_error('embed_dim', f'must be divisible by num_heads ({num_heads})')
        return cleaned_data

    def to_config(self):
        return CaptionerConfig(**self.cleaned_data)
