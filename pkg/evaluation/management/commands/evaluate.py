import json
from pathlib import Path

from core.commands import PipelineCommand
from core.exceptions import AnnotationFormatError
from core.manifests import record_run
from core.utils import write_json
from dataset_io.ingest import LAYOUTS, ingest_summary_dataset
from dataset_io.store import KIND_SCORES, FeatureStore, read_scores

from evaluation.selection import PROTOCOLS, evaluate_dataset

REPORT_DIRNAME = 'evaluation'
REPORT_FILENAME = 'report.json'


class Command(PipelineCommand):
    help = 'Score keyshot summaries against ground truth user summaries with F1'

    def add_pipeline_arguments(self, parser):
        parser.add_argument('--scores', required=True, help='Score store written by summarize')
        parser.add_argument('--gt', required=True, help='Ground truth directory')
        parser.add_argument('--layout', choices=LAYOUTS, default='tvsum')
        parser.add_argument('--protocol', choices=PROTOCOLS, help='Overrides evaluation.protocol')
        parser.add_argument('--budget', type=float, help='Overrides evaluation.budget_fraction')
        parser.add_argument(
            '--split',
            help='split.json from finetune; only its held-out videos are evaluated',
        )
        parser.add_argument('--out', help=f'Report path (default: <scores>/{REPORT_DIRNAME}/{REPORT_FILENAME})')

    def run(self, options):
        extra = []
        if options.get('protocol'):
            extra.append(f'evaluation.protocol="{options["protocol"]}"')
        if options.get('budget') is not None:
            extra.append(f'evaluation.budget_fraction={options["budget"]}')
        config = self.load_config(options, extra)

        store = FeatureStore(options['scores'])
        score_ids = store.video_ids(KIND_SCORES)
        if not score_ids:
            raise AnnotationFormatError(f'no summary scores in {options["scores"]}')
        scores = {video_id: read_scores(store, video_id) for video_id in score_ids}
        gts = ingest_summary_dataset(
            options['gt'],
            options['layout'],
            shot_len=config.dataset.fallback_shot_len,
            frame_stride=config.dataset.frame_stride,
        )

        video_ids = None
        if options.get('split'):
            split = json.loads(Path(options['split']).read_text(encoding='utf-8'))
            video_ids = split['held_out']
            if not video_ids:
                raise AnnotationFormatError(f'{options["split"]} holds no held-out videos')

        report = evaluate_dataset(
            scores,
            gts,
            protocol=config.evaluation.protocol,
            budget_fraction=config.evaluation.budget_fraction,
            video_ids=video_ids,
        )
        out = Path(options.get('out') or Path(options['scores']) / REPORT_DIRNAME / REPORT_FILENAME)
        write_json(out, report.as_dict())
        record_run('evaluate', out.parent, config=config.snapshot)

        for video_id, f1 in sorted(report.per_video.items()):
            self.stdout.write(f'{video_id}: F1 {f1:.4f}')
        self.success(f'{report.protocol} mean F1 {report.mean_f1:.4f} over {len(report.per_video)} videos -> {out}')
