"""Object-based augmentation for georeferenced semantic-segmentation data."""

__version__ = "0.1.0"
