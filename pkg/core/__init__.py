# Services: geometry, clustering, dynamics, naturalistic sets, projection
__version__ = "0.1.0"
