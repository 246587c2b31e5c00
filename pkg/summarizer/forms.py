from django import forms

from .model import SummarizerConfig


class SummarizerConfigForm(forms.Form):
    embed_dim = forms.IntegerField(min_value=1, help_text='Token width')
    num_layers = forms.IntegerField(min_value=1)
    num_heads = forms.IntegerField(min_value=1)
    mlp_ratio = forms.FloatField(min_value=0.25)
    dropout = forms.FloatField(min_value=0.0)
    max_frames = forms.IntegerField(min_value=1)

    def clean_dropout(self):
        dropout = self.cleaned_data['dropout']
        if dropout >= 1.0:
            raise forms.ValidationError('dropout must be in [0, 1)', code='range')
        return dropout

    def clean(self):
        cleaned_data = super().clean()
        embed_dim = cleaned_data.get('embed_dim')
        num_heads = cleaned_data.get('num_heads')
        if embed_dim and num_heads and embed_dim % num_heads:
            self.add_error('embed_dim', f'must be divisible by num_heads ({num_heads})')
        return cleaned_data

    def to_config(self):
        return SummarizerConfig(**self.cleaned_data)
