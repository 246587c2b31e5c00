from pathlib import Path

from captioner.vocab import Vocabulary
from core.commands import PipelineCommand
from core.exceptions import AnnotationFormatError
from core.manifests import record_run
from dataset_io.ingest import ingest_anet_captions

from training.checkpoints import build_bundle, load_checkpoint
from training.inputs import PriorSource, build_examples, feature_ids
from training.trainer import HISTORY_FILENAME, LAST_CHECKPOINT, Trainer


class Command(PipelineCommand):
    help = 'Pre-train the summarizer through the dense captioner on a caption dataset'

    def add_pipeline_arguments(self, parser):
        parser.add_argument('--features', required=True, help='Feature store of the caption dataset')
        parser.add_argument('--captions', required=True, help='ActivityNet-Caption style JSON')
        parser.add_argument('--priors', help='Prior store from gen_prior; generated on the fly when omitted')
        parser.add_argument('--resume', help='Checkpoint to continue from')
        parser.add_argument('--epochs', type=int, help='Overrides training.epochs')
        parser.add_argument('--out', required=True, help='Output directory for checkpoints and history')

    def run(self, options):
        extra = ['training.mode="pretrain"']
        if options.get('epochs') is not None:
            extra.append(f'training.epochs={options["epochs"]}')
        config = self.load_config(options, extra)

        store, video_ids = feature_ids(options['features'])
        ingest = ingest_anet_captions(options['captions'])
        annotations = {annotation.video_id: annotation for annotation in ingest.annotations}
        if not set(video_ids) & set(annotations):
            raise AnnotationFormatError(
                f'no video in {options["captions"]} has features in {options["features"]}'
            )

        priors = PriorSource(config, options.get('priors')) if config.loss.beta_prior > 0 else None
        examples = build_examples(store, video_ids, annotations=annotations, priors=priors)
        input_dim = examples[0].features.dim
        if options.get('resume'):
            bundle = load_checkpoint(
                options['resume'], input_dim, config.summarizer, config.captioner,
            )
        else:
            vocab = Vocabulary.build(
                [example.annotation for example in examples], config.captioner.vocab_min_count,
            )
            bundle = build_bundle(input_dim, vocab, config.summarizer, config.captioner, seed=config.training.seed)

        out = Path(options['out'])
        trainer = Trainer(bundle, config.training, config.loss)
        result = trainer.pretrain(examples, config.training.epochs, out_dir=out)
        bundle.vocab.save(out / 'vocab.json')

        record_run(
            'pretrain',
            out,
            config=config.snapshot,
            seed=config.training.seed,
            label_set_hash=priors.label_hash if priors else '',
            checkpoint_hashes=result.checkpoint_hashes,
        )
        if ingest.dropped_events:
            self.warn(f'Dropped {ingest.dropped_events} degenerate caption events')
        final = f'{result.steps[-1].total:.5f}' if result.steps else 'n/a'
        self.success(
            f'Pre-trained on {len(examples)} videos for {config.training.epochs} epochs '
            f'({len(result.steps)} steps, final loss {final}) -> {out / LAST_CHECKPOINT}, {out / HISTORY_FILENAME}'
        )
