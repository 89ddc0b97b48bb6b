""" Semantic 3D map labeling and localization toolkit """
__version__ = '0.1.0'
