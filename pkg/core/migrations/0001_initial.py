from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='RunManifest',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('created', models.DateTimeField(auto_now_add=True)),
                ('modified', models.DateTimeField(auto_now=True)),
                ('command', models.CharField(choices=[('gen_prior', 'Generate CLIP priors'), ('pretrain', 'Weakly-supervised pre-training'), ('finetune', 'Fine-tuning'), ('summarize', 'Summarize videos'), ('evaluate', 'Evaluate summaries'), ('make_synthetic_data', 'Synthetic fixture corpus')], db_index=True, max_length=32)),
                ('output_dir', models.CharField(max_length=1024)),
                ('seed', models.BigIntegerField(blank=True, null=True)),
                ('config_snapshot', models.JSONField(blank=True, default=dict)),
                ('label_set_hash', models.CharField(blank=True, max_length=64)),
                ('checkpoint_hashes', models.JSONField(blank=True, default=dict, help_text='Checkpoint file name to content hash')),
                ('tool_version', models.CharField(max_length=32)),
            ],
            options={
                'db_table': 'run_manifests',
                'ordering': ['-created'],
                'indexes': [models.Index(fields=['command', '-created'], name='run_manife_command_5e2b1c_idx')],
            },
        ),
    ]
