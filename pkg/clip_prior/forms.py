from django import forms

from .prior import OBJECT_PLACEHOLDER, PriorConfig, load_labels


class PriorConfigForm(forms.Form):
    """
    Prior generator settings. The label list itself is a versioned asset,
    read from ``settings.VIDSUM_LABELS_FILE`` unless a command passes another.
    """

    prompt_template = forms.CharField(help_text='Prompt with an [object] placeholder')
    tau = forms.FloatField(help_text='Similarity clip threshold')
    min_run_frames = forms.IntegerField(min_value=1)
    max_run_fraction = forms.FloatField()

    def clean_prompt_template(self):
        template = self.cleaned_data['prompt_template']
        if OBJECT_PLACEHOLDER not in template:
            raise forms.ValidationError(f'must contain {OBJECT_PLACEHOLDER}', code='placeholder')
        return template

    def clean_tau(self):
        tau = self.cleaned_data['tau']
        if not 0 < tau < 1:
            raise forms.ValidationError('must be in (0, 1)', code='range')
        return tau

    def clean_max_run_fraction(self):
        fraction = self.cleaned_data['max_run_fraction']
        if not 0 < fraction <= 1:
            raise forms.ValidationError('must be in (0, 1]', code='range')
        return fraction

    def to_config(self, labels_file=None):
        return PriorConfig(labels=load_labels(labels_file), **self.cleaned_data)
