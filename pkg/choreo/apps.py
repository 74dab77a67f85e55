from django.apps import AppConfig


class ChoreoConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'choreo'
    verbose_name = 'Chorégraphie générative'
