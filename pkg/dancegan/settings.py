"""
Django settings for the dancegan project.

Le projet n'expose aucune interface web : Django fournit la configuration,
les commandes de gestion, les templates (rendu SVG) et l'ORM qui garde la
trace des entraînements et des évaluations.
"""

from pathlib import Path
import os

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'dancegan-local-only-secret-key')

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    'rest_framework',
    'choreo',
]

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'autoescape': True,
        },
    },
]


# Database

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

LANGUAGE_CODE = 'fr-fr'
TIME_ZONE = 'UTC'
USE_I18N = True
USE_TZ = True


# ============================================================================
# CONFIGURATION DE CELERY
# ============================================================================
CELERY_BROKER_URL = os.environ.get(
    'CELERY_BROKER_URL', 'sqla+sqlite:///' + os.path.join(BASE_DIR, 'celery-broker.sqlite')
)
CELERY_RESULT_BACKEND = 'db+sqlite:///' + os.path.join(BASE_DIR, 'celery-results.sqlite')
CELERY_ACCEPT_CONTENT = ['json']
CELERY_TASK_SERIALIZER = 'json'
CELERY_RESULT_SERIALIZER = 'json'
CELERY_TIMEZONE = TIME_ZONE

# Exécution synchrone par défaut : un seul processus, résultats déterministes.
CELERY_TASK_ALWAYS_EAGER = os.environ.get('CHOREO_TASK_ALWAYS_EAGER', '1') == '1'
CELERY_TASK_EAGER_PROPAGATES = True


# Logging configuration
LOG_DIR = Path(os.environ.get('CHOREO_LOG_DIR', BASE_DIR / 'logs'))

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {process:d} {thread:d} {message}',
            'style': '{',
        },
        'simple': {
            'format': '{levelname} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'file': {
            'level': 'INFO',
            'class': 'logging.FileHandler',
            'filename': LOG_DIR / 'choreo.log',
            'formatter': 'verbose',
        },
        'console': {
            'level': 'INFO',
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'root': {
        'handlers': ['console', 'file'],
        'level': 'WARNING',
    },
    'loggers': {
        'django': {
            'handlers': ['console', 'file'],
            'level': 'WARNING',
            'propagate': False,
        },
        'choreo': {
            'handlers': ['console', 'file'],
            'level': 'DEBUG',
            'propagate': False,
        },
    },
}

# Créer le dossier logs s'il n'existe pas
os.makedirs(LOG_DIR, exist_ok=True)


# Valeurs par défaut du pipeline (surchargées par le fichier --config)
CHOREO_SETTINGS = {
    'FPS': 24,
    'SAMPLE_RATE': 16000,
    'WINDOW_FRAMES': 64,
    'GP': {
        'C': 512,
        'T': 4,
        'V': 1,
        'SIGMA': 200.0,
    },
    'MODEL': {
        'CHANNELS': [512, 256, 128, 128],
        'DROPOUT': 0.3,
        'CLASS_ENCODING': 'index',
        'TEMPORAL_KERNEL': 9,
    },
    'TRAIN': {
        'EPOCHS': 500,
        'BATCH': 8,
        'GEN_LR': 0.002,
        'DISC_LR': 2e-4,
        'BETA1': 0.5,
        'BETA2': 0.999,
        'LAMBDA_REC': 100.0,
        'CHECKPOINT_EVERY': 100,
        'SATURATING_GEN_LOSS': False,
        'STEPS': None,
    },
    'CLASSIFIER': {
        'EPOCHS': 500,
        'BATCH': 8,
        'LR': 0.01,
        'FOLDS': 10,
        'WINDOW_SECONDS': 2.0,
        'HOP_SECONDS': 1.0,
        'CHANNELS': [8, 16, 16, 32, 32],
        'KERNELS': [32, 16, 8, 8, 4],
        'STRIDES': [8, 4, 4, 2, 2],
        'MU': 255,
    },
    'AUGMENT': {
        'SHIFT_STRIDE': 32,
        'EVAL_SHIFT_STRIDE': 32,
        'EVAL_SHIFT_STRIDE_MJ': 16,
        'GP_NOISE': True,
        'GP_NOISE_AMPLITUDE': 0.02,
        'GP_NOISE_SIGMA': 100.0,
    },
    'SKELETON': {
        'KNOT_STRIDE': 4,
        'PER_SEQUENCE_NORMALIZATION': False,
        'CANVAS': 512,
    },
    'EVAL': {
        'REPEATS': 5,
        'FEATURE_DIM': 64,
        'EPOCHS': 30,
        'LR': 0.01,
        'BATCH': 8,
        'EIGEN_CLAMP': 1e-10,
    },
    'SYNTHETIC': {
        'TRAIN_PER_STYLE': 20,
        'EVAL_PER_STYLE': 10,
        'MIN_FRAMES': 80,
        'MAX_FRAMES': 128,
        'WITH_AUDIO': True,
    },
}
