"""
Hiérarchie d'exceptions du paquet.

Trois familles correspondent aux codes de sortie de la ligne de commande:
erreurs de configuration (2), erreurs de données (3) et abandons numériques (4).
"""


class OccupancyError(Exception):
    """Exception de base du paquet."""

    exit_code = 1


class ConfigError(OccupancyError):
    """Configuration invalide."""

    exit_code = 2


class DataError(OccupancyError):
    """Donnees, formes ou fichiers invalides."""

    exit_code = 3


class NumericalError(OccupancyError):
    """Valeur non finie ou degenerée pendant un calcul."""

    exit_code = 4


# Configuration
class UnknownKeyError(ConfigError):
    """Cle inconnue dans le fichier de configuration."""


class ConfigTypeError(ConfigError):
    """Type ou valeur invalide pour une cle de configuration."""


class MissingFileError(ConfigError):
    """Chemin reference introuvable."""


# Donnees
class NonDivisibleExtentError(DataError):
    """Etendue de grille non multiple de la taille de voxel."""


class NonPositiveSizeError(DataError):
    """Taille de voxel ou etendue non strictement positive."""


class ShapeMismatchError(DataError):
    """Dimensions incompatibles entre entree et parametres."""


class PayloadShapeMismatchError(ShapeMismatchError):
    """Nombre de lignes de payload different du nombre de gaussiennes."""


class SpecMismatchError(DataError):
    """Grilles definies sur des specifications differentes."""


class BadMagicError(DataError):
    """Signature de fichier inattendue."""


class TruncatedFileError(DataError):
    """Fichier plus court que l'en-tete ne l'annonce."""


class NonFiniteValueError(DataError):
    """Valeur non finie lue depuis un fichier."""


class MissingGroundTruthError(DataError):
    """Verite terrain absente ou incomplete."""


class OutOfGridError(DataError):
    """Objet mobile sorti de la grille."""


class NonUnitDirectionError(DataError):
    """Direction de rayon non normalisee."""


class DigestMismatchError(DataError):
    """Empreintes incompatibles entre checkpoint et scene."""


class IndexOutOfRangeError(DataError):
    """Indice de frame ou de camera hors limites."""


class OutputIOError(DataError):
    """Ecriture impossible dans le repertoire de sortie."""


# Numerique
class DegenerateQuaternionError(NumericalError):
    """Quaternion de norme quasi nulle."""


class NonFiniteLossError(NumericalError):
    """Composante de perte non finie."""


class NonFiniteGradientError(NumericalError):
    """Gradient non fini."""


class InvalidCameraError(DataError):
    """Intrinseques ou extrinseques de camera invalides."""


class InvalidLabelError(DataError):
    """Identifiant de classe hors de la taxonomie."""
