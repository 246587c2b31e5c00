from django.db import models


class TimeStampedModel(models.Model):
    """
    An abstract base class model that provides self-updating
    ``created`` and ``modified`` fields.
    """
    created = models.DateTimeField(auto_now_add=True)
    modified = models.DateTimeField(auto_now=True)

    class Meta:
        abstract = True


class RunManifest(TimeStampedModel):
    """Record of one artifact-producing command run."""

    COMMAND_CHOICES = [
        ('gen_prior', 'Generate CLIP priors'),
        ('pretrain', 'Weakly-supervised pre-training'),
        ('finetune', 'Fine-tuning'),
        ('summarize', 'Summarize videos'),
        ('evaluate', 'Evaluate summaries'),
        ('make_synthetic_data', 'Synthetic fixture corpus'),
    ]

    command = models.CharField(max_length=32, choices=COMMAND_CHOICES, db_index=True)
    output_dir = models.CharField(max_length=1024)
    seed = models.BigIntegerField(null=True, blank=True)
    config_snapshot = models.JSONField(default=dict, blank=True)
    label_set_hash = models.CharField(max_length=64, blank=True)
    checkpoint_hashes = models.JSONField(
        default=dict,
        blank=True,
        help_text='Checkpoint file name to content hash'
    )
    tool_version = models.CharField(max_length=32)

    class Meta:
        db_table = 'run_manifests'
        ordering = ['-created']
        indexes = [
            models.Index(fields=['command', '-created'], name='run_manife_command_5e2b1c_idx'),
        ]

    def __str__(self):
        return f'{self.command} -> {self.output_dir}'

    def as_dict(self):
        return {
            'command': self.command,
            'output_dir': self.output_dir,
            'seed': self.seed,
            'config': self.config_snapshot,
            'label_set_hash': self.label_set_hash,
            'checkpoint_hashes': self.checkpoint_hashes,
            'tool_version': self.tool_version,
            'created': self.created.isoformat() if self.created else None,
        }
