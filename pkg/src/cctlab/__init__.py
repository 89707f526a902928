"""Critical clearing time datasets and learning-based CCT prediction for
multi-machine power systems under load and renewable uncertainty."""

__version__ = "0.1.0"
