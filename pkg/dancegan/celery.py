# dancegan/celery.py

import os
from celery import Celery

# Définir le module de settings de Django pour le programme 'celery'.
os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'dancegan.settings')

app = Celery('dancegan')
app.config_from_object('django.conf:settings', namespace='CELERY')
app.autodiscover_tasks()
