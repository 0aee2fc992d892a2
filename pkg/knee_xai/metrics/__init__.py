from .classification import accuracy, evaluate_scores, roc_auc
from .image import gaussian_window, mse, psnr, ssim, ssim_map, volume_psnr, volume_ssim

__all__ = [
    "accuracy",
    "evaluate_scores",
    "roc_auc",
    "gaussian_window",
    "mse",
    "psnr",
    "ssim",
    "ssim_map",
    "volume_psnr",
    "volume_ssim",
]
