from pathlib import Path

from core.commands import PipelineCommand
from core.exceptions import MissingAnnotationError
from core.manifests import record_run
from dataset_io.ingest import LAYOUTS, ingest_caption_sidecar, ingest_summary_dataset, write_reconciliation_report

from training.checkpoints import load_checkpoint
from training.inputs import PriorSource, build_examples, feature_ids
from training.trainer import (
    BEST_CHECKPOINT,
    FINETUNE_MODES,
    FINETUNE_SUP,
    FINETUNE_WEAK,
    SPLIT_FILENAME,
    Trainer,
)

RECONCILIATION_FILENAME = 'reconciliation.jsonl'


class Command(PipelineCommand):
    help = 'Fine-tune a checkpoint on a summary dataset, supervised or through its caption sidecar'

    def add_pipeline_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True, help='Checkpoint to start from')
        parser.add_argument('--features', required=True, help='Feature store of the target dataset')
        parser.add_argument('--mode', choices=sorted(FINETUNE_MODES), required=True)
        parser.add_argument('--gt', help='Ground truth directory (sup mode)')
        parser.add_argument('--layout', choices=LAYOUTS, default='tvsum')
        parser.add_argument('--captions', help='Caption sidecar JSON (weak mode)')
        parser.add_argument('--priors', help='Prior store from gen_prior (weak mode)')
        parser.add_argument('--split', type=float, help='Fraction of videos to fine-tune on; overrides training.split')
        parser.add_argument('--epochs', type=int, help='Overrides training.epochs')
        parser.add_argument('--out', required=True, help='Output directory')

    def run(self, options):
        mode = options['mode']
        extra = [f'training.mode="{FINETUNE_MODES[mode]}"']
        if options.get('split') is not None:
            extra.append(f'training.split={options["split"]}')
        if options.get('epochs') is not None:
            extra.append(f'training.epochs={options["epochs"]}')
        config = self.load_config(options, extra)
        out = Path(options['out'])

        store, video_ids = feature_ids(options['features'])
        annotations = summaries = priors = None
        if mode == FINETUNE_WEAK:
            if not options.get('captions'):
                raise MissingAnnotationError('--mode weak needs the caption sidecar: pass --captions')
            sidecar = ingest_caption_sidecar(options['captions'], video_ids)
            if sidecar.orphans:
                write_reconciliation_report(out / RECONCILIATION_FILENAME, sidecar.orphans, options['captions'])
                self.warn(f'{len(sidecar.orphans)} sidecar videos have no features, see {RECONCILIATION_FILENAME}')
            annotations = {annotation.video_id: annotation for annotation in sidecar.annotations}
            if config.training.use_prior_in_finetune and config.loss.beta_prior > 0:
                priors = PriorSource(config, options.get('priors'))
        elif mode == FINETUNE_SUP:
            if not options.get('gt'):
                raise MissingAnnotationError('--mode sup needs ground truth summaries: pass --gt')
            summaries = {
                summary.video_id: summary
                for summary in ingest_summary_dataset(
                    options['gt'],
                    options['layout'],
                    shot_len=config.dataset.fallback_shot_len,
                    frame_stride=config.dataset.frame_stride,
                )
            }

        examples = build_examples(store, video_ids, annotations=annotations, summaries=summaries, priors=priors)
        if not examples:
            raise MissingAnnotationError(f'no video in {options["features"]} has {mode} annotations')
        bundle = load_checkpoint(
            options['checkpoint'], examples[0].features.dim, config.summarizer, config.captioner,
        )

        trainer = Trainer(bundle, config.training, config.loss)
        result = trainer.finetune(examples, mode, config.training.epochs, config.training.split, out_dir=out)

        record_run(
            'finetune',
            out,
            config=config.snapshot,
            seed=config.training.seed,
            label_set_hash=priors.label_hash if priors else '',
            checkpoint_hashes=result.checkpoint_hashes,
        )
        best = 'n/a' if result.best_loss is None else f'{result.best_loss:.5f}'
        self.success(
            f'Fine-tuned ({mode}) on {len(result.split["train"])} videos, '
            f'{len(result.split["held_out"])} held out in {out / SPLIT_FILENAME}; '
            f'best loss {best} -> {out / BEST_CHECKPOINT}'
        )
