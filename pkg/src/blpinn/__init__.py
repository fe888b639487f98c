"""Physics-informed neural networks for 1-D Buckley-Leverett transport."""

import torch

torch.set_default_dtype(torch.float64)

__version__ = "0.1.0"
