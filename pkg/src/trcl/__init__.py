"""Trust-region continual learning: replay gradient plus Fisher-metric EWC pull,
its one-step-MAML reading, and numerical oracles on toy model families."""

__version__ = "0.1.0"
