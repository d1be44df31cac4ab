"""
Mean-Teacher training loop for the image-level classifier.
"""
from typing import Any, Dict, Optional, Sequence

import structlog
import torch
from torch import optim

from ...shared.errors import EmptyInputError
from ...shared.models import AugmentedPair, HyperParams, MlmtLosses
from ...shared.utils import check_finite, poly_lr, set_learning_rate, to_float
from .losses import loss_mlmt
from .network import MultiLabelClassifier, classify, ema_update


logger = structlog.get_logger(__name__)


class MlmtTrainer:
    """Student update by Adam on the batch-mean objective, then an EMA teacher update.

    With teacher=None the trainer reduces to a plain supervised multi-label
    classifier (the CNN baseline): no consistency term and no EMA.
    """

    def __init__(self, student: MultiLabelClassifier, teacher: Optional[MultiLabelClassifier],
                 hp: HyperParams, lambda_cons: Optional[float] = None, name: str = "mlmt"):
        self.student = student
        self.teacher = teacher
        self.hp = hp
        self.name = name
        self.lambda_cons = hp.lambda_cons if lambda_cons is None else lambda_cons
        if teacher is None:
            self.lambda_cons = 0.0
        self.optimizer = optim.Adam(student.parameters(), lr=hp.lr_cls)

    def learning_rate(self, iteration: int) -> float:
        return poly_lr(self.hp.lr_cls, iteration, self.hp.classifier_max_iter, self.hp.pow)

    def train_step(self, pairs: Sequence[AugmentedPair], labels: Optional[torch.Tensor],
                   has_labels: Optional[torch.Tensor], iteration: int) -> MlmtLosses:
        """One iteration on a batch of view pairs.

        labels is N x C (rows of unlabeled samples are ignored via has_labels).
        """
        if not pairs:
            raise EmptyInputError("MLMT step needs a nonempty batch")
        if iteration >= self.hp.classifier_max_iter:
            raise ValueError(
                f"iteration {iteration} >= classifier max_iter {self.hp.classifier_max_iter}")
        set_learning_rate(self.optimizer, self.learning_rate(iteration))
        self.student.train()

        view_a = torch.stack([pair.view_a for pair in pairs])
        student_out = classify(self.student, view_a)
        teacher_out = None
        if self.teacher is not None:
            self.teacher.eval()
            with torch.no_grad():
                view_b = torch.stack([pair.view_b for pair in pairs])
                teacher_out = classify(self.teacher, view_b)

        self.optimizer.zero_grad(set_to_none=True)
        total, cce, cons = loss_mlmt(
            student_out, teacher_out, labels, self.lambda_cons,
            has_labels=has_labels, cls_loss=self.hp.cls_loss,
        )
        check_finite({"loss_cce": cce, "loss_cons": cons, "loss_total": total}, iteration)
        total.backward()
        self.optimizer.step()
        if self.teacher is not None:
            ema_update(self.teacher, self.student, self.hp.ema_decay)

        losses = MlmtLosses(total=to_float(total), cce=to_float(cce), cons=to_float(cons))
        logger.debug(f"{self.name}_step", iteration=iteration, **losses.model_dump())
        return losses

    def state_dict(self) -> Dict[str, Any]:
        return {"cls": self.optimizer.state_dict()}

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        self.optimizer.load_state_dict(state["cls"])
