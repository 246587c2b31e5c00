from dataclasses import replace

from core.commands import PipelineCommand
from core.exceptions import AnnotationFormatError
from core.manifests import record_run
from dataset_io.store import KIND_FEATURES, FeatureStore, read_features, write_prior
from encoders.bridge import load_encoder

from clip_prior.prior import PriorGenerator, load_labels


class Command(PipelineCommand):
    help = 'Generate binary CLIP priors for every video in a feature store'

    def add_pipeline_arguments(self, parser):
        parser.add_argument('--features', required=True, help='Feature store directory')
        parser.add_argument('--labels', help='Label list, one object per line')
        parser.add_argument('--tau', type=float, help='Similarity threshold (overrides prior.tau)')
        parser.add_argument('--out', required=True, help='Output store for the priors')

    def run(self, options):
        extra = [f'prior.tau={options["tau"]}'] if options.get('tau') is not None else []
        config = self.load_config(options, extra)
        prior_config = replace(config.prior, labels=load_labels(options.get('labels')))

        features_store = FeatureStore(options['features'])
        video_ids = features_store.video_ids(KIND_FEATURES)
        if not video_ids:
            raise AnnotationFormatError(f'no frame features in {options["features"]}')

        generator = PriorGenerator(load_encoder(config.encoder), prior_config)
        out_store = FeatureStore(options['out'])
        positive = 0
        for video_id in video_ids:
            prior = generator.generate(read_features(features_store, video_id))
            write_prior(out_store, prior, tau=prior_config.tau, label_set_hash=prior_config.label_hash)
            positive += int(prior.prior.sum() > 0)
            self.stdout.write(f'{video_id}: {int(prior.prior.sum())}/{len(prior)} prior frames')

        record_run(
            'gen_prior',
            options['out'],
            config=config.snapshot,
            seed=config.encoder.seed,
            label_set_hash=prior_config.label_hash,
        )
        self.success(
            f'Wrote {len(video_ids)} priors ({positive} non-empty) to {options["out"]} '
            f'with tau={prior_config.tau}'
        )
