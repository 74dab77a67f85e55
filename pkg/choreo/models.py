import uuid

from django.db import models
from django.utils import timezone
from django.utils.translation import gettext_lazy as _


class TrainingRun(models.Model):
    """Trace d'un entraînement (classifieur audio ou GAN)"""

    class Kind(models.TextChoices):
        CLASSIFIER = 'classifier', _('Classifieur audio')
        GAN = 'gan', _('Générateur adversarial')

    class Status(models.TextChoices):
        PENDING = 'pending', _('En attente')
        RUNNING = 'running', _('En cours')
        COMPLETED = 'completed', _('Terminé')
        FAILED = 'failed', _('Échec')

    class Meta:
        verbose_name = _('Entraînement')
        verbose_name_plural = _('Entraînements')
        ordering = ['-created_at']

    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    kind = models.CharField(max_length=20, choices=Kind.choices, verbose_name=_('Type'))
    status = models.CharField(max_length=20, choices=Status.choices, default=Status.PENDING,
                              verbose_name=_('Statut'))
    config = models.JSONField(default=dict, verbose_name=_('Configuration'))
    seed = models.BigIntegerField(null=True, blank=True, verbose_name=_('Graine'))
    steps = models.IntegerField(default=0, verbose_name=_('Pas effectués'))
    checkpoint_path = models.CharField(max_length=500, blank=True, verbose_name=_('Checkpoint'))
    metrics_path = models.CharField(max_length=500, blank=True, verbose_name=_('Journal des métriques'))
    report = models.JSONField(default=dict, blank=True, verbose_name=_('Rapport'))
    error_message = models.TextField(blank=True, verbose_name=_('Message d\'erreur'))
    created_at = models.DateTimeField(auto_now_add=True, verbose_name=_('Date de création'))
    updated_at = models.DateTimeField(auto_now=True, verbose_name=_('Date de modification'))
    completed_at = models.DateTimeField(null=True, blank=True, verbose_name=_('Date de fin'))

    def __str__(self):
        return f"{self.get_kind_display()} {self.id} ({self.status})"

    def save(self, *args, **kwargs):
        if self.status in (self.Status.COMPLETED, self.Status.FAILED) and not self.completed_at:
            self.completed_at = timezone.now()
        super().save(*args, **kwargs)

    def mark_running(self):
        self.status = self.Status.RUNNING
        self.save(update_fields=['status', 'updated_at'])

    def mark_failed(self, error: Exception):
        self.status = self.Status.FAILED
        self.error_message = str(error)
        self.save()


class EvaluationRecord(models.Model):
    """Rapport FID / GAN-train / GAN-test sérialisé"""

    class Meta:
        verbose_name = _('Évaluation')
        verbose_name_plural = _('Évaluations')
        ordering = ['-created_at']

    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    run = models.ForeignKey(TrainingRun, on_delete=models.SET_NULL, null=True, blank=True,
                            related_name='evaluations', verbose_name=_('Entraînement évalué'))
    report = models.JSONField(default=dict, verbose_name=_('Rapport'))
    repeats = models.IntegerField(default=0, verbose_name=_('Répétitions'))
    seed = models.BigIntegerField(null=True, blank=True, verbose_name=_('Graine'))
    created_at = models.DateTimeField(auto_now_add=True, verbose_name=_('Date de création'))

    def __str__(self):
        return f"Évaluation {self.id} ({self.repeats} répétitions)"
