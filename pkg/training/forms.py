from dataclasses import dataclass

from django import forms

MODE_PRETRAIN = 'pretrain'
MODE_FINETUNE_SUP = 'finetune_sup'
MODE_FINETUNE_WEAK = 'finetune_weak'
MODES = (MODE_PRETRAIN, MODE_FINETUNE_SUP, MODE_FINETUNE_WEAK)

OPTIMIZER_ADAM = 'adam'


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-5
    batch_size: int = 1
    epochs: int = 1
    seed: int = 0
    optimizer: str = OPTIMIZER_ADAM
    mode: str = MODE_PRETRAIN
    checkpoint_every: int = 0
    freeze_captioner: bool = False
    grad_clip_norm: float = 1.0
    split: float = 0.8
    use_prior_in_finetune: bool = True


class TrainConfigForm(forms.Form):
    """
    Optimizer and loop settings shared by pre-training and fine-tuning.

    ``batch_size`` videos are accumulated into one optimizer update;
    ``split`` is the fraction of videos fine-tuned on, the rest are held out.
    """

    learning_rate = forms.FloatField(min_value=0.0)
    batch_size = forms.IntegerField(min_value=1)
    epochs = forms.IntegerField(min_value=0)
    seed = forms.IntegerField(min_value=0)
    optimizer = forms.ChoiceField(choices=[(OPTIMIZER_ADAM, 'Adam')])
    mode = forms.ChoiceField(choices=[(mode, mode) for mode in MODES])
    checkpoint_every = forms.IntegerField(
        min_value=0,
        help_text='Write an extra checkpoint every N epochs; 0 disables'
    )
    freeze_captioner = forms.BooleanField(required=False)
    grad_clip_norm = forms.FloatField(
        min_value=0.0,
        help_text='Global gradient norm clip; 0 disables'
    )
    split = forms.FloatField()
    use_prior_in_finetune = forms.BooleanField(required=False)

    def clean_split(self):
        split = self.cleaned_data['split']
        if not 0 < split <= 1:
            raise forms.ValidationError('must be in (0, 1]', code='range')
        return split

    def to_config(self):
        return TrainConfig(**self.cleaned_data)
