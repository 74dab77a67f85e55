"""
Serializers de validation : fichier RunConfig, manifeste du corpus et
rapport d'évaluation. Les sections absentes du fichier de configuration
reprennent les valeurs de settings.CHOREO_SETTINGS.
"""

from django.conf import settings
from rest_framework import serializers

from .exceptions import DataError
from .styles import StyleLabel


def _defaults(section: str) -> dict:
    return settings.CHOREO_SETTINGS[section]


class StyleField(serializers.CharField):
    """Nom de style insensible à la casse -> StyleLabel"""

    def to_internal_value(self, data):
        try:
            return StyleLabel.parse(data)
        except DataError as e:
            raise serializers.ValidationError(str(e))

    def to_representation(self, value):
        return StyleLabel.parse(value).name.lower()


class SectionSerializer(serializers.Serializer):
    """Section de configuration complétée par les valeurs par défaut"""

    section = None
    keys = {}

    def validate(self, attrs):
        defaults = _defaults(self.section)
        merged = {name: defaults[key] for name, key in self.keys.items() if key in defaults}
        merged.update(attrs)
        return merged

    @classmethod
    def default_values(cls) -> dict:
        serializer = cls(data={})
        serializer.is_valid(raise_exception=True)
        return serializer.validated_data


class GpSerializer(SectionSerializer):
    section = 'GP'
    keys = {'C': 'C', 'T': 'T', 'V': 'V', 'sigma': 'SIGMA'}

    C = serializers.IntegerField(min_value=1, required=False)
    T = serializers.IntegerField(min_value=1, required=False)
    V = serializers.IntegerField(min_value=1, max_value=1, required=False)
    sigma = serializers.FloatField(min_value=1e-9, required=False)


class ModelSerializer(SectionSerializer):
    section = 'MODEL'
    keys = {'channels': 'CHANNELS', 'dropout': 'DROPOUT', 'class_encoding': 'CLASS_ENCODING',
            'temporal_kernel': 'TEMPORAL_KERNEL'}

    channels = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=4, max_length=4,
                                     required=False)
    dropout = serializers.FloatField(min_value=0.0, max_value=0.99, required=False)
    class_encoding = serializers.ChoiceField(choices=['index', 'onehot'], required=False)
    temporal_kernel = serializers.IntegerField(min_value=1, required=False)

    def validate_temporal_kernel(self, value):
        if value % 2 == 0:
            raise serializers.ValidationError("Le noyau temporel doit être impair.")
        return value


class TrainSerializer(SectionSerializer):
    section = 'TRAIN'
    keys = {'epochs': 'EPOCHS', 'batch': 'BATCH', 'gen_lr': 'GEN_LR', 'disc_lr': 'DISC_LR', 'beta1': 'BETA1',
            'beta2': 'BETA2', 'lambda_rec': 'LAMBDA_REC', 'checkpoint_every': 'CHECKPOINT_EVERY',
            'saturating_gen_loss': 'SATURATING_GEN_LOSS', 'steps': 'STEPS'}

    epochs = serializers.IntegerField(min_value=1, required=False)
    batch = serializers.IntegerField(min_value=2, required=False)
    gen_lr = serializers.FloatField(min_value=1e-12, required=False)
    disc_lr = serializers.FloatField(min_value=1e-12, required=False)
    beta1 = serializers.FloatField(min_value=0.0, max_value=0.999999, required=False)
    beta2 = serializers.FloatField(min_value=0.0, max_value=0.999999, required=False)
    lambda_rec = serializers.FloatField(min_value=0.0, required=False)
    checkpoint_every = serializers.IntegerField(min_value=1, required=False)
    saturating_gen_loss = serializers.BooleanField(required=False)
    steps = serializers.IntegerField(min_value=1, allow_null=True, required=False)


class ClassifierSerializer(SectionSerializer):
    section = 'CLASSIFIER'
    keys = {'epochs': 'EPOCHS', 'batch': 'BATCH', 'lr': 'LR', 'folds': 'FOLDS',
            'window_seconds': 'WINDOW_SECONDS', 'hop_seconds': 'HOP_SECONDS', 'channels': 'CHANNELS',
            'kernels': 'KERNELS', 'strides': 'STRIDES', 'mu': 'MU'}

    epochs = serializers.IntegerField(min_value=1, required=False)
    batch = serializers.IntegerField(min_value=2, required=False)
    lr = serializers.FloatField(min_value=1e-12, required=False)
    folds = serializers.IntegerField(min_value=2, required=False)
    window_seconds = serializers.FloatField(min_value=0.01, required=False)
    hop_seconds = serializers.FloatField(min_value=0.01, required=False)
    channels = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=1, required=False)
    kernels = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=1, required=False)
    strides = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=1, required=False)
    mu = serializers.IntegerField(min_value=1, required=False)

    def validate(self, attrs):
        attrs = super().validate(attrs)
        if not len(attrs['channels']) == len(attrs['kernels']) == len(attrs['strides']):
            raise serializers.ValidationError(
                {'channels': "channels, kernels et strides doivent avoir la même longueur."}
            )
        return attrs


class GpNoiseSerializer(serializers.Serializer):
    enabled = serializers.BooleanField(required=False)
    amplitude = serializers.FloatField(min_value=0.0, required=False)
    sigma = serializers.FloatField(min_value=1e-9, required=False)


class AugmentSerializer(SectionSerializer):
    section = 'AUGMENT'
    keys = {'shift_stride': 'SHIFT_STRIDE', 'eval_shift_stride': 'EVAL_SHIFT_STRIDE',
            'eval_shift_stride_mj': 'EVAL_SHIFT_STRIDE_MJ'}

    shift_stride = serializers.IntegerField(min_value=1, required=False)
    eval_shift_stride = serializers.IntegerField(min_value=1, required=False)
    eval_shift_stride_mj = serializers.IntegerField(min_value=1, required=False)
    gp_noise = GpNoiseSerializer(required=False)

    def validate(self, attrs):
        attrs = super().validate(attrs)
        defaults = _defaults(self.section)
        noise = {
            'enabled': defaults['GP_NOISE'],
            'amplitude': defaults['GP_NOISE_AMPLITUDE'],
            'sigma': defaults['GP_NOISE_SIGMA'],
        }
        noise.update(attrs.get('gp_noise') or {})
        attrs['gp_noise'] = noise
        return attrs


class SkeletonSerializer(SectionSerializer):
    section = 'SKELETON'
    keys = {'knot_stride': 'KNOT_STRIDE', 'per_sequence_normalization': 'PER_SEQUENCE_NORMALIZATION',
            'canvas': 'CANVAS'}

    knot_stride = serializers.IntegerField(min_value=1, required=False)
    per_sequence_normalization = serializers.BooleanField(required=False)
    canvas = serializers.FloatField(min_value=1.0, required=False)


class EvalSerializer(SectionSerializer):
    section = 'EVAL'
    keys = {'repeats': 'REPEATS', 'feature_dim': 'FEATURE_DIM', 'epochs': 'EPOCHS', 'lr': 'LR',
            'batch': 'BATCH', 'eigen_clamp': 'EIGEN_CLAMP'}

    repeats = serializers.IntegerField(min_value=1, required=False)
    feature_dim = serializers.IntegerField(min_value=1, required=False)
    epochs = serializers.IntegerField(min_value=1, required=False)
    lr = serializers.FloatField(min_value=1e-12, required=False)
    batch = serializers.IntegerField(min_value=2, required=False)
    eigen_clamp = serializers.FloatField(min_value=0.0, required=False)


class PathsSerializer(serializers.Serializer):
    manifest = serializers.CharField(required=False, allow_blank=False)
    out = serializers.CharField(required=False, allow_blank=False)
    classifier = serializers.CharField(required=False, allow_blank=False)
    generator = serializers.CharField(required=False, allow_blank=False)
    generated = serializers.CharField(required=False, allow_blank=False)
    motion_out = serializers.CharField(required=False, allow_blank=False)


SECTIONS = {
    'gp': GpSerializer,
    'model': ModelSerializer,
    'train': TrainSerializer,
    'classifier': ClassifierSerializer,
    'augment': AugmentSerializer,
    'skeleton': SkeletonSerializer,
    'eval': EvalSerializer,
}


class RunConfigSerializer(serializers.Serializer):
    """Schéma complet du fichier --config"""

    seed = serializers.IntegerField(min_value=0, max_value=2 ** 32 - 1, required=False, allow_null=True)
    gp = GpSerializer(required=False)
    model = ModelSerializer(required=False)
    train = TrainSerializer(required=False)
    classifier = ClassifierSerializer(required=False)
    augment = AugmentSerializer(required=False)
    skeleton = SkeletonSerializer(required=False)
    eval = EvalSerializer(required=False)
    paths = PathsSerializer(required=False)

    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ["Section inconnue."] for key in unknown})
        return super().to_internal_value(data)

    def validate(self, attrs):
        for name, section in SECTIONS.items():
            if name not in attrs:
                attrs[name] = section.default_values()
        attrs.setdefault('paths', {})
        attrs.setdefault('seed', None)
        return attrs


def flatten_errors(errors, prefix: str = '') -> list:
    """{'train': {'gen_lr': ['...']}} -> ['train.gen_lr: ...']"""
    messages = []
    if isinstance(errors, dict):
        for key, value in errors.items():
            path = f"{prefix}.{key}" if prefix and key != 'non_field_errors' else (prefix or str(key))
            messages.extend(flatten_errors(value, path))
    elif isinstance(errors, list):
        for index, value in enumerate(errors):
            if isinstance(value, (dict, list)):
                messages.extend(flatten_errors(value, f"{prefix}.{index}" if prefix else str(index)))
            else:
                messages.append(f"{prefix}: {value}")
    else:
        messages.append(f"{prefix}: {errors}")
    return messages


# ============================================================================
# MANIFESTE
# ============================================================================

class ManifestEntrySerializer(serializers.Serializer):
    motion_file = serializers.CharField()
    audio_file = serializers.CharField(required=False, allow_null=True, allow_blank=True)
    style = StyleField()
    split = serializers.ChoiceField(choices=['train', 'eval'])
    source_id = serializers.CharField(required=False, allow_blank=True)


class ManifestSerializer(serializers.Serializer):
    clips = ManifestEntrySerializer(many=True, allow_empty=False)


# ============================================================================
# RAPPORT D'ÉVALUATION
# ============================================================================

class StatSerializer(serializers.Serializer):
    mean = serializers.FloatField()
    std = serializers.FloatField(min_value=0.0)


class MetricStatsSerializer(serializers.Serializer):
    fid = StatSerializer()
    gan_train = StatSerializer()
    gan_test = StatSerializer()

    def validate(self, attrs):
        for metric in ('gan_train', 'gan_test'):
            if not 0.0 <= attrs[metric]['mean'] <= 1.0:
                raise serializers.ValidationError({metric: "Une précision doit être dans [0, 1]."})
        if attrs['fid']['mean'] < -1e-6:
            raise serializers.ValidationError({'fid': "La FID doit être positive."})
        return attrs


class PerStyleSerializer(serializers.Serializer):
    ballet = MetricStatsSerializer()
    mj = MetricStatsSerializer()
    salsa = MetricStatsSerializer()


class EvalReportSerializer(MetricStatsSerializer):
    per_style = PerStyleSerializer()
    real = MetricStatsSerializer()
    real_per_style = PerStyleSerializer()
    repeats = serializers.IntegerField(min_value=1)
    seed = serializers.IntegerField(allow_null=True, required=False)
