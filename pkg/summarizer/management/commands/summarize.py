from pathlib import Path

import torch

from captioner.matching import decode_captions
from captioner.model import caption_forward
from core.commands import PipelineCommand
from core.manifests import record_run
from core.utils import write_json
from dataset_io.ingest import LAYOUTS, ingest_summary_dataset, uniform_boundaries
from dataset_io.store import FeatureStore, read_features, write_scores
from evaluation.selection import keyshot_summary, summary_budget
from training.checkpoints import checkpoint_hash, load_checkpoint
from training.inputs import feature_ids

from summarizer.model import summarize, weight_features

KEYSHOTS_FILENAME = 'keyshots.json'
CAPTIONS_FILENAME = 'captions.json'


class Command(PipelineCommand):
    help = 'Score every video in a feature store and select keyshots under the summary budget'

    def add_pipeline_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--features', required=True, help='Feature store to summarize')
        parser.add_argument('--out', required=True, help='Output store for scores, keyshots and captions')
        parser.add_argument('--budget', type=float, help='Overrides evaluation.budget_fraction')
        parser.add_argument('--gt', help='Ground truth directory providing shot boundaries')
        parser.add_argument('--layout', choices=LAYOUTS, default='tvsum')
        parser.add_argument(
            '--captions',
            action='store_true',
            help=f'Also decode dense captions into {CAPTIONS_FILENAME}',
        )

    def run(self, options):
        extra = []
        if options.get('budget') is not None:
            extra.append(f'evaluation.budget_fraction={options["budget"]}')
        config = self.load_config(options, extra)
        budget_fraction = config.evaluation.budget_fraction

        store, video_ids = feature_ids(options['features'])
        first = read_features(store, video_ids[0])
        bundle = load_checkpoint(options['checkpoint'], first.dim, config.summarizer, config.captioner)
        bundle.captioner.eval()

        boundaries = {}
        if options.get('gt'):
            boundaries = {
                summary.video_id: summary.shot_boundaries
                for summary in ingest_summary_dataset(
                    options['gt'],
                    options['layout'],
                    shot_len=config.dataset.fallback_shot_len,
                    frame_stride=config.dataset.frame_stride,
                )
            }

        out = Path(options['out'])
        out_store = FeatureStore(out)
        keyshots = {}
        captions = {}
        for video_id in video_ids:
            features = read_features(store, video_id)
            scores = summarize(bundle.summarizer, features)
            write_scores(out_store, scores)

            shots_from_gt = video_id in boundaries
            video_boundaries = (
                boundaries[video_id] if shots_from_gt
                else uniform_boundaries(features.num_frames, config.dataset.fallback_shot_len)
            )
            mask, shots, selection = keyshot_summary(scores, video_boundaries, budget_fraction)
            keyshots[video_id] = {
                'num_frames': features.num_frames,
                'budget_frames': summary_budget(features.num_frames, budget_fraction),
                'selected_frames': int(mask.sum()),
                'shots': [[shot.start_frame, shot.end_frame] for shot, chosen in zip(shots, selection) if chosen],
                'synthetic_shots': not shots_from_gt,
            }

            if options['captions']:
                with torch.no_grad():
                    weighted = weight_features(features, scores)
                    output = caption_forward(bundle.captioner, weighted)
                captions[video_id] = [
                    caption.as_dict()
                    for caption in decode_captions(
                        output, config.captioner.confidence_threshold, features.duration_sec, bundle.vocab,
                    )
                ]
            self.stdout.write(
                f'{video_id}: {keyshots[video_id]["selected_frames"]}/{features.num_frames} frames selected'
            )

        write_json(out / KEYSHOTS_FILENAME, keyshots)
        if options['captions']:
            write_json(out / CAPTIONS_FILENAME, captions)
        record_run(
            'summarize',
            out,
            config=config.snapshot,
            checkpoint_hashes={Path(options['checkpoint']).name: checkpoint_hash(options['checkpoint'])},
        )
        self.success(f'Summarized {len(video_ids)} videos at budget {budget_fraction} -> {out}')
