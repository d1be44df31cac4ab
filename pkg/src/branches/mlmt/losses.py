"""
Mean-Teacher multi-label objective: supervised class term plus MSE consistency.
"""
from typing import Optional, Tuple

import torch

from ...shared.errors import ShapeMismatchError
from ...shared.models import ClassifierLoss


LOG_EPS = 1e-8


def loss_mlmt(student_out: torch.Tensor, teacher_out: Optional[torch.Tensor],
              labels: Optional[torch.Tensor], lambda_cons: float,
              has_labels: Optional[torch.Tensor] = None,
              cls_loss: ClassifierLoss = ClassifierLoss.CCE
              ) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Return (total, cce, cons), each averaged over the batch.

    cce = -sum_c z(c) log G(x)(c) for samples with labels (0 for the others);
    cons = mean_c (G(x) - H(x'))^2 with the teacher output held constant;
    total = cce + lambda_cons * cons. A missing teacher output disables cons.
    Single vectors of length C are accepted as a batch of one.
    """
    single = student_out.ndim == 1
    student = student_out.unsqueeze(0) if single else student_out

    if labels is not None:
        labels = (labels.unsqueeze(0) if labels.ndim == 1 else labels).to(student.dtype)
        if labels.shape != student.shape:
            raise ShapeMismatchError(
                f"labels {tuple(labels.shape)} do not match outputs {tuple(student.shape)}")
        log_pos = torch.log(student.clamp_min(LOG_EPS))
        cce = -(labels * log_pos).sum(dim=1)
        if ClassifierLoss(cls_loss) == ClassifierLoss.BCE:
            log_neg = torch.log((1.0 - student).clamp_min(LOG_EPS))
            cce = cce - ((1.0 - labels) * log_neg).sum(dim=1)
        if has_labels is not None:
            cce = cce * has_labels.to(student.dtype)
    else:
        cce = student.sum(dim=1) * 0.0

    if teacher_out is not None:
        teacher = (teacher_out.unsqueeze(0) if teacher_out.ndim == 1 else teacher_out).detach()
        if teacher.shape != student.shape:
            raise ShapeMismatchError(
                f"teacher output {tuple(teacher.shape)} does not match {tuple(student.shape)}")
        cons = (student - teacher).pow(2).mean(dim=1)
    else:
        cons = student.sum(dim=1) * 0.0

    total = cce + lambda_cons * cons
    return total.mean(), cce.mean(), cons.mean()
