from core.commands import PipelineCommand
from core.exceptions import ConfigurationError
from core.manifests import record_run
from encoders.bridge import load_encoder

from dataset_io.synthetic import make_synthetic_corpus, write_synthetic_corpus


class Command(PipelineCommand):
    help = 'Write the synthetic fixture corpus: features, captions, ground truth and designated segments'

    def add_pipeline_arguments(self, parser):
        parser.add_argument('--out', required=True, help='Output directory')
        parser.add_argument('--videos', type=int, default=8, help='Number of videos')
        parser.add_argument('--frames', type=int, default=40, help='Frames per video')
        parser.add_argument('--seed', type=int, default=0)

    def run(self, options):
        config = self.load_config(options)
        handle = load_encoder(config.encoder)
        try:
            corpus = make_synthetic_corpus(
                handle,
                config.prior.labels,
                prompt_template=config.prior.prompt_template,
                num_videos=options['videos'],
                num_frames=options['frames'],
                fps=config.dataset.fps,
                seed=options['seed'],
            )
        except ValueError as exc:
            raise ConfigurationError({'--frames': [str(exc)]})
        paths = write_synthetic_corpus(corpus, options['out'])
        record_run(
            'make_synthetic_data',
            options['out'],
            config=config.snapshot,
            seed=options['seed'],
            label_set_hash=config.prior.label_hash,
        )
        for name, path in paths.items():
            self.stdout.write(f'{name}: {path}')
        self.success(f'Wrote {len(corpus)} synthetic videos to {options["out"]}')
