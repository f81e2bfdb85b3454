"""
Django settings for the IFM lab.

This configuration provides:
- Environment-based settings through environs
- Application defaults for experiments (IFM_LAB_SETTINGS)
- Comprehensive logging to console and rotating files
- Optional Sentry error reporting
"""

import os
import sys
from pathlib import Path

from environs import Env

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Initialize environment variables
env = Env()

# Read .env file if it exists
env.read_env(BASE_DIR / '.env', recurse=False)

# Local experiments only; override in any shared deployment
SECRET_KEY = env.str('SECRET_KEY', default='ifm-lab-local-development-key')

DEBUG = env.bool('DEBUG', default=False)

ALLOWED_HOSTS = env.list('ALLOWED_HOSTS', default=['localhost', '127.0.0.1'])

# Application definition
DJANGO_APPS = [
    'django.contrib.admin',
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'django.contrib.sessions',
    'django.contrib.messages',
    'django.contrib.staticfiles',
]

THIRD_PARTY_APPS = [
    # Admin Enhancements
    'import_export',
    'rangefilter',
]

LOCAL_APPS = [
    'core',
    'environments',
    'risk',
    'matching',
    'learners',
    'theory',
    'experiments',
]

INSTALLED_APPS = DJANGO_APPS + THIRD_PARTY_APPS + LOCAL_APPS

ROOT_URLCONF = 'config.urls'

# Required by the admin system checks
MIDDLEWARE = [
    'django.contrib.sessions.middleware.SessionMiddleware',
    'django.middleware.common.CommonMiddleware',
    'django.contrib.auth.middleware.AuthenticationMiddleware',
    'django.contrib.messages.middleware.MessageMiddleware',
]

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [
                'django.template.context_processors.request',
                'django.contrib.auth.context_processors.auth',
                'django.contrib.messages.context_processors.messages',
            ],
        },
    },
]

# Database
DATABASES = {
    'default': {
        'ENGINE': env.str('DB_ENGINE', default='django.db.backends.sqlite3'),
        'NAME': env.str('DB_NAME', default=str(BASE_DIR / 'ifm_lab.sqlite3')),
    },
}

# Internationalization
LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = True
USE_TZ = True

STATIC_URL = 'static/'

# Default primary key field type
DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Experiment defaults
IFM_LAB_SETTINGS = {
    'DEFAULT_SEED': 0,
    'SEED_OVERRIDE': env.int('IFM_LAB_SEED', default=None),
    'OUTPUT_DIR': env.str('IFM_LAB_OUTPUT_DIR', default=str(BASE_DIR / 'results')),
    'JOBS': env.int('IFM_LAB_JOBS', default=1),
    'METRICS_TEXTFILE': env.str('IFM_LAB_METRICS_TEXTFILE', default=''),
    'MU2_SCALE': 10.0,
    'SAMPLES_PER_ENV': 1000,
    'MATCHER_TOL_ANALYTIC': 1e-8,
    'MATCHER_TOL_SAMPLED': 5e-2,
    'NEWTON_MULTISTARTS': 64,
    'GROUP_SIZE': 2,
}

# Logging Configuration
LOG_LEVEL = env.str('LOG_LEVEL', default='INFO')
LOG_DIR = env.str('LOG_DIR', default=os.path.join(BASE_DIR, 'logs'))

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
        'console': {
            'level': LOG_LEVEL,
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
        'file': {
            'level': 'DEBUG' if DEBUG else 'INFO',
            'class': 'logging.handlers.RotatingFileHandler',
            'filename': os.path.join(LOG_DIR, 'ifm_lab.log'),
            'maxBytes': 1024*1024*10,  # 10MB
            'backupCount': 5,
            'formatter': 'verbose',
        },
    },
    'root': {
        'handlers': ['console', 'file'],
        'level': 'WARNING',
    },
    'loggers': {
        'django': {
            'handlers': ['console', 'file'],
            'level': 'INFO',
            'propagate': False,
        },
        **{
            app: {
                'handlers': ['console', 'file'],
                'level': 'DEBUG' if DEBUG else LOG_LEVEL,
                'propagate': False,
            }
            for app in LOCAL_APPS
        },
    },
}

# Create logs directory if it doesn't exist
os.makedirs(LOG_DIR, exist_ok=True)

# Sentry Configuration (for production error tracking)
SENTRY_DSN = env.str('SENTRY_DSN', default='')
if SENTRY_DSN and not DEBUG:
    import sentry_sdk
    from sentry_sdk.integrations.django import DjangoIntegration

    sentry_sdk.init(
        dsn=SENTRY_DSN,
        integrations=[DjangoIntegration()],
        traces_sample_rate=0.1,
        send_default_pii=False,
        environment=env.str('ENVIRONMENT', default='development'),
    )

# Testing Configuration
if 'test' in sys.argv or 'pytest' in sys.modules:
    DATABASES['default'] = {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': ':memory:',
    }
    IFM_LAB_SETTINGS['SEED_OVERRIDE'] = None
    IFM_LAB_SETTINGS['METRICS_TEXTFILE'] = ''
    LOGGING['handlers']['console']['level'] = 'WARNING'
