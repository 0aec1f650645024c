"""sufflab - approximate sufficiency, f-contrastive losses and downstream heads"""

__version__ = "1.0.0"
