"""fed-dpgan - federated, differentially private GAN augmentation on a desk."""

__version__ = "0.1.0"
