"""
Exceptions du domaine choreo.

Les fonctions pures lèvent ces erreurs ; les tâches et les commandes de
gestion les convertissent en codes de sortie.
"""


class ChoreoError(Exception):
    """Classe de base de toutes les erreurs du pipeline"""

    exit_code = 1


class ConfigError(ChoreoError):
    """Configuration invalide (schéma, valeurs hors bornes)"""

    exit_code = 2


class DataError(ChoreoError, ValueError):
    """Données d'entrée manquantes ou mal formées"""

    exit_code = 3


class ShapeError(DataError):
    """Formes de tenseurs incompatibles"""


class DegeneratePoseError(DataError):
    """Boîte englobante de diagonale nulle"""


class MissingJointError(DataError):
    """Articulation jamais observée dans une séquence"""

    def __init__(self, joints):
        self.joints = list(joints)
        super().__init__(f"Articulations jamais observées : {self.joints}")


class NumericalError(ChoreoError, ArithmeticError):
    """Valeur non finie rencontrée pendant un calcul"""

    exit_code = 4

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
