"""Query-based U-Net instance segmentation on a small numpy autodiff engine."""
