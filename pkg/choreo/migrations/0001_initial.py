# Generated by Django 5.2.4 on 2026-10-19 09:12

from django.db import migrations, models
import django.db.models.deletion
import uuid


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='TrainingRun',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('kind', models.CharField(choices=[('classifier', 'Classifieur audio'), ('gan', 'Générateur adversarial')], max_length=20, verbose_name='Type')),
                ('status', models.CharField(choices=[('pending', 'En attente'), ('running', 'En cours'), ('completed', 'Terminé'), ('failed', 'Échec')], default='pending', max_length=20, verbose_name='Statut')),
                ('config', models.JSONField(default=dict, verbose_name='Configuration')),
                ('seed', models.BigIntegerField(blank=True, null=True, verbose_name='Graine')),
                ('steps', models.IntegerField(default=0, verbose_name='Pas effectués')),
                ('checkpoint_path', models.CharField(blank=True, max_length=500, verbose_name='Checkpoint')),
                ('metrics_path', models.CharField(blank=True, max_length=500, verbose_name='Journal des métriques')),
                ('report', models.JSONField(blank=True, default=dict, verbose_name='Rapport')),
                ('error_message', models.TextField(blank=True, verbose_name="Message d'erreur")),
                ('created_at', models.DateTimeField(auto_now_add=True, verbose_name='Date de création')),
                ('updated_at', models.DateTimeField(auto_now=True, verbose_name='Date de modification')),
                ('completed_at', models.DateTimeField(blank=True, null=True, verbose_name='Date de fin')),
            ],
            options={
                'verbose_name': 'Entraînement',
                'verbose_name_plural': 'Entraînements',
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='EvaluationRecord',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('report', models.JSONField(default=dict, verbose_name='Rapport')),
                ('repeats', models.IntegerField(default=0, verbose_name='Répétitions')),
                ('seed', models.BigIntegerField(blank=True, null=True, verbose_name='Graine')),
                ('created_at', models.DateTimeField(auto_now_add=True, verbose_name='Date de création')),
                ('run', models.ForeignKey(blank=True, null=True, on_delete=django.db.models.deletion.SET_NULL, related_name='evaluations', to='choreo.trainingrun', verbose_name='Entraînement évalué')),
            ],
            options={
                'verbose_name': 'Évaluation',
                'verbose_name_plural': 'Évaluations',
                'ordering': ['-created_at'],
            },
        ),
    ]
