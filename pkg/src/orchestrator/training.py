"""
Combined training schedule: one s4GAN step, one MLMT step and optionally one CNN
baseline step per iteration, with validation, checkpoints and the metrics CSV.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import structlog
import torch

from ..branches.mlmt import MlmtTrainer, build_classifier, make_teacher
from ..branches.s4gan import S4GanTrainer, build_discriminator, build_generator
from ..evaluation.evaluator import collect_predictions, evaluate_modes
from ..evaluation.metrics import MetricsWriter, ScoreTrace, trace_scores, write_trace_csv
from ..shared.config import RunConfig, config_hash, dump_config
from ..shared.data import (
    BatchCycler,
    augment_pair,
    augment_segmentation,
    index_samples,
    load_samples,
    make_split,
)
from ..shared.errors import IncompatibleCheckpointError
from ..shared.models import (
    CheckpointHeader,
    FusionMode,
    MetricRecord,
    MlmtLosses,
    S4GanLosses,
    SegmentationSample,
    SplitPlan,
    TraceRow,
)
from ..shared.state import CheckpointManager, ModelBundle
from ..shared.utils import Stream, derive_seed, reseed_torch
from ..synthdata.scenes import generate_samples, make_resolver


logger = structlog.get_logger(__name__)

METRICS_FILE = "metrics.csv"
TRACE_FILE = "d_scores.csv"


@dataclass
class RunData:
    train: Dict[str, SegmentationSample]
    val: List[SegmentationSample]
    split: SplitPlan


@dataclass
class TrainResult:
    output_dir: Path
    checkpoint: Path
    metrics_path: Path
    iterations: int
    finished: bool
    trace: List[TraceRow] = field(default_factory=list)
    last_val_miou: Optional[float] = None


def load_data(config: RunConfig) -> Tuple[List[SegmentationSample], List[SegmentationSample]]:
    """Training and validation samples from manifests or the synthetic generator."""
    spec = config.scene_spec()
    if config.manifest:
        resolver = make_resolver(spec)
        train = load_samples(config.manifest, config.num_classes, resolver)
        val = load_samples(config.val_manifest, config.num_classes, resolver)
        return train, val
    train = generate_samples(spec, config.num_train)
    val = generate_samples(spec, config.num_val, start=config.num_train)
    return train, val


def prepare_data(config: RunConfig) -> RunData:
    train, val = load_data(config)
    split = make_split([s.sample_id for s in train], config.labeled_ratio, config.seed,
                       config.weak_fraction)
    return RunData(train=index_samples(train), val=val, split=split)


def build_bundle(config: RunConfig) -> ModelBundle:
    """Initialise every network of a run from the run seed."""
    torch.manual_seed(derive_seed(config.seed, Stream.INIT))
    size = (config.image_size, config.image_size)
    bundle = ModelBundle(
        generator=build_generator(config.num_classes, size, config.seg_widths),
        discriminator=build_discriminator(config.num_classes, config.disc_widths,
                                          config.disc_dropout),
    )
    if config.mlmt_enabled:
        bundle.student = build_classifier(config.num_classes, size, config.cls_widths)
        bundle.teacher = make_teacher(bundle.student)
    if config.train_cnn_baseline:
        bundle.cnn = build_classifier(config.num_classes, size, config.cls_widths)
    return bundle


def fusion_classifiers(bundle: ModelBundle, use_teacher: bool = True) -> Dict[str, torch.nn.Module]:
    classifiers = {}
    mlmt = bundle.teacher if use_teacher else bundle.student
    if mlmt is not None:
        classifiers["mlmt"] = mlmt
    if bundle.cnn is not None:
        classifiers["cnn"] = bundle.cnn
    return classifiers


class TrainingRun:
    """Owns the networks, trainers and samplers of one training run."""

    def __init__(self, config: RunConfig, data: Optional[RunData] = None):
        self.config = config
        self.data = data or prepare_data(config)
        self.bundle = build_bundle(config)
        self.output_dir = Path(config.output_dir)
        self.checkpoints = CheckpointManager(self.output_dir)
        self.hash = config_hash(config)
        self.trace = ScoreTrace()

        self.s4gan = S4GanTrainer(self.bundle.generator, self.bundle.discriminator, config,
                                  adversarial=config.adversarial)
        self.mlmt = None
        if self.bundle.student is not None:
            self.mlmt = MlmtTrainer(self.bundle.student, self.bundle.teacher, config)
        self.cnn = None
        if self.bundle.cnn is not None:
            self.cnn = MlmtTrainer(self.bundle.cnn, None, config, lambda_cons=0.0, name="cnn")

        split = self.data.split
        # weak images have no masks, so segmentation treats them as unlabeled
        seg_unlabeled = (split.weak_ids + split.unlabeled_ids) or split.all_ids
        cls_unlabeled = split.unlabeled_ids or split.all_ids
        seed, bs = config.seed, config.batch_size
        cls_bs = config.classifier_batch_size
        self.labeled_batches = BatchCycler(split.labeled_ids, bs, seed, Stream.LABELED_BATCHES)
        self.unlabeled_batches = BatchCycler(seg_unlabeled, bs, seed, Stream.UNLABELED_BATCHES)
        self.cls_labeled_size = max(1, math.ceil(cls_bs / 2))
        self.class_labeled_batches = BatchCycler(split.class_labeled_ids, self.cls_labeled_size,
                                                 seed, Stream.CLASS_LABELED_BATCHES)
        self.class_unlabeled_batches = BatchCycler(
            cls_unlabeled, max(1, cls_bs - self.cls_labeled_size), seed,
            Stream.CLASS_UNLABELED_BATCHES)
        self.cnn_batches = BatchCycler(split.class_labeled_ids, cls_bs, seed, Stream.CNN_BATCHES)

    @property
    def total_iterations(self) -> int:
        if self.mlmt is None and self.cnn is None:
            return self.config.max_iter
        return max(self.config.max_iter, self.config.classifier_max_iter)

    # batches

    def _segmentation_batch(self, ids: List[str], iteration: int, group: int,
                            with_masks: bool) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        images, masks = [], []
        for j, sample_id in enumerate(ids):
            sample = self.data.train[sample_id]
            image, mask = augment_segmentation(
                sample.image, sample.mask if with_masks else None,
                derive_seed(self.config.seed, Stream.SEG_AUGMENT, iteration, group, j),
                flip=self.config.seg_flip, crop=self.config.seg_crop,
            )
            images.append(image)
            masks.append(mask)
        return torch.stack(images), (torch.stack(masks) if with_masks else None)

    def _class_batch(self, ids: List[str], iteration: int, group: int, labeled: bool):
        pairs, labels = [], []
        augment = self.config.augment()
        for j, sample_id in enumerate(ids):
            sample = self.data.train[sample_id]
            seed = derive_seed(self.config.seed, Stream.CLS_AUGMENT, iteration, group, j)
            pairs.append(augment_pair(sample, seed, augment))
            if labeled and sample.class_vector is None:
                raise ValueError(f"sample '{sample_id}' has no image-level labels")
            labels.append(sample.class_vector if labeled
                          else torch.zeros(self.config.num_classes, dtype=torch.long))
        return pairs, torch.stack(labels)

    # steps

    def _s4gan_step(self, iteration: int) -> S4GanLosses:
        reseed_torch(self.config.seed, Stream.S4GAN, iteration)
        images_l, masks_l = self._segmentation_batch(
            self.labeled_batches.batch(iteration), iteration, 0, with_masks=True)
        images_u, _ = self._segmentation_batch(
            self.unlabeled_batches.batch(iteration), iteration, 1, with_masks=False)
        losses = self.s4gan.train_step(images_l, masks_l, images_u, iteration)
        if losses.d_real_mean is not None:
            trace_scores(self.trace, iteration, losses.d_real_mean, is_real=True)
            trace_scores(self.trace, iteration, losses.d_fake_mean, is_real=False)
        return losses

    def _reseed_classifier(self, stream: Stream, iteration: int) -> None:
        # classifier steps draw only from seeded generators; in parallel mode the
        # global RNG belongs to the s4GAN thread
        if not self.config.parallel_branches:
            reseed_torch(self.config.seed, stream, iteration)

    def _mlmt_step(self, iteration: int) -> MlmtLosses:
        self._reseed_classifier(Stream.MLMT, iteration)
        pairs_l, labels_l = self._class_batch(
            self.class_labeled_batches.batch(iteration), iteration, 0, labeled=True)
        pairs_u, labels_u = self._class_batch(
            self.class_unlabeled_batches.batch(iteration), iteration, 1, labeled=False)
        has_labels = torch.tensor([True] * len(pairs_l) + [False] * len(pairs_u))
        return self.mlmt.train_step(pairs_l + pairs_u, torch.cat([labels_l, labels_u]),
                                    has_labels, iteration)

    def _cnn_step(self, iteration: int) -> MlmtLosses:
        self._reseed_classifier(Stream.CNN, iteration)
        pairs, labels = self._class_batch(self.cnn_batches.batch(iteration), iteration, 2,
                                          labeled=True)
        return self.cnn.train_step(pairs, labels, None, iteration)

    # validation / persistence

    def validate(self) -> float:
        preds = collect_predictions(self.bundle.generator, self.data.val,
                                    fusion_classifiers(self.bundle, self.config.use_teacher))
        mode = FusionMode(self.config.fusion)
        rows = evaluate_modes(preds, [mode], self.config.tau,
                              self.config.image_size * self.config.image_size)
        return max(row.miou for row in rows)

    def _optimizer_states(self) -> Dict[str, dict]:
        states = {"s4gan": self.s4gan.state_dict()}
        if self.mlmt is not None:
            states["mlmt"] = self.mlmt.state_dict()
        if self.cnn is not None:
            states["cnn"] = self.cnn.state_dict()
        return states

    def save(self, path: Path, iteration: int) -> Path:
        header = CheckpointHeader(
            iteration=iteration,
            hyperparams_hash=self.hash,
            num_classes=self.config.num_classes,
            networks=sorted(self.bundle.networks()),
            config=self.config.model_dump(mode="json"),
            trace=self.trace.state_dict(),
        )
        return self.checkpoints.save(self.bundle, path, header, self._optimizer_states())

    def restore(self, path: str) -> int:
        loaded = self.checkpoints.load(self.bundle, path, expected_hash=self.hash,
                                       expected_classes=self.config.num_classes)
        try:
            self.s4gan.load_state_dict(loaded.optimizers["s4gan"])
            if self.mlmt is not None:
                self.mlmt.load_state_dict(loaded.optimizers["mlmt"])
            if self.cnn is not None:
                self.cnn.load_state_dict(loaded.optimizers["cnn"])
        except KeyError as e:
            raise IncompatibleCheckpointError(f"checkpoint {path} lacks optimizer state {e}") from e
        if loaded.header.trace:
            self.trace.load_state_dict(loaded.header.trace)
        CheckpointManager.restore_rng(loaded.rng)
        return loaded.header.iteration

    def _record(self, iteration: int, seg: Optional[S4GanLosses],
                cls: Optional[MlmtLosses], val_miou: Optional[float]) -> MetricRecord:
        adversarial = self.config.adversarial
        if seg is not None:
            lr = self.s4gan.learning_rates(iteration)[0]
        elif self.mlmt is not None:
            lr = self.mlmt.learning_rate(iteration)
        else:
            lr = None
        return MetricRecord(
            iter=iteration,
            lr=lr,
            loss_ce=seg.ce if seg else None,
            loss_fm=seg.fm if seg and adversarial else None,
            loss_st=seg.st if seg and adversarial else None,
            loss_d=seg.d_loss if seg else None,
            loss_cce=cls.cce if cls else None,
            loss_cons=cls.cons if cls else None,
            d_real_mean=seg.d_real_mean if seg else None,
            d_fake_mean=seg.d_fake_mean if seg else None,
            miou_val=val_miou,
        )

    # schedule

    def _sync_points(self, start: int, stop: int, total: int) -> List[int]:
        """Iteration counts after which every branch must be up to date."""
        config = self.config
        points = [
            done for done in range(start + 1, stop + 1)
            if done % config.val_every == 0 or done % config.ckpt_every == 0 or done == total
        ]
        if not points or points[-1] != stop:
            points.append(stop)
        return points

    def _s4gan_span(self, begin: int, end: int) -> Dict[int, S4GanLosses]:
        return {i: self._s4gan_step(i) for i in range(begin, min(end, self.config.max_iter))}

    def _mlmt_span(self, begin: int, end: int) -> Dict[int, MlmtLosses]:
        stop = min(end, self.config.classifier_max_iter)
        return {i: self._mlmt_step(i) for i in range(begin, stop)}

    def _cnn_span(self, begin: int, end: int) -> Dict[int, MlmtLosses]:
        stop = min(end, self.config.classifier_max_iter)
        return {i: self._cnn_step(i) for i in range(begin, stop)}

    def _train_span(self, begin: int, end: int
                    ) -> Tuple[Dict[int, S4GanLosses], Dict[int, MlmtLosses]]:
        """Train iterations [begin, end) of every branch.

        Sequentially each iteration runs s4GAN, then MLMT, then the CNN baseline. With
        parallel_branches each branch covers the whole span in its own thread; the
        branches share no parameters and reseed per step, so both give the same result.
        """
        branches = [self._s4gan_span]
        if self.mlmt is not None:
            branches.append(self._mlmt_span)
        if self.cnn is not None:
            branches.append(self._cnn_span)

        if self.config.parallel_branches:
            with ThreadPoolExecutor(max_workers=len(branches)) as pool:
                futures = [pool.submit(branch, begin, end) for branch in branches]
                results = [future.result() for future in futures]
        else:
            results = [{} for _ in branches]
            for i in range(begin, end):
                for branch, losses in zip(branches, results):
                    losses.update(branch(i, i + 1))
        seg_losses = results[0]
        cls_losses = results[1] if self.mlmt is not None else {}
        return seg_losses, cls_losses

    def run(self) -> TrainResult:
        config = self.config
        self.output_dir.mkdir(parents=True, exist_ok=True)
        dump_config(config, self.output_dir / "config.cfg")
        writer = MetricsWriter(self.output_dir / METRICS_FILE)
        start = self.restore(config.resume) if config.resume else 0
        writer.truncate_from(start)
        total = self.total_iterations
        stop = min(config.stop_iter or total, total)
        log = logger.bind(output_dir=str(self.output_dir), seed=config.seed)
        log.info("training_started", start=start, stop=stop, total=total,
                 mode=config.training_mode.value, adversarial=config.adversarial)

        last_val = None
        begin = start
        for end in self._sync_points(start, stop, total):
            seg_losses, cls_losses = self._train_span(begin, end)
            for iteration in range(begin, end):
                done = iteration + 1
                val_miou = None
                if done % config.val_every == 0 or done == total:
                    val_miou = last_val = self.validate()
                    log.info("validation", iteration=iteration, miou=val_miou,
                             fusion=FusionMode(config.fusion).value)
                writer.write(self._record(iteration, seg_losses.get(iteration),
                                          cls_losses.get(iteration), val_miou))
                if done % config.ckpt_every == 0 and done < stop:
                    self.save(self.checkpoints.path_for(done), done)
            begin = end

        finished = stop == total
        if finished:
            self.trace.flush()
            write_trace_csv(self.trace.rows, self.output_dir / TRACE_FILE)
            checkpoint = self.save(self.checkpoints.final_path, total)
        else:
            checkpoint = self.save(self.checkpoints.path_for(stop), stop)
        log.info("training_finished" if finished else "training_stopped",
                 iteration=stop, checkpoint=str(checkpoint))
        return TrainResult(
            output_dir=self.output_dir,
            checkpoint=checkpoint,
            metrics_path=writer.path,
            iterations=stop,
            finished=finished,
            trace=list(self.trace.rows),
            last_val_miou=last_val,
        )


def run_train(config: RunConfig, data: Optional[RunData] = None) -> TrainResult:
    """Train every enabled branch for its iteration budget and write the final checkpoint."""
    return TrainingRun(config, data).run()
