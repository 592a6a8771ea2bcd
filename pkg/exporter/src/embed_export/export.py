"""Run a vision backbone over an image dataset and export dual-channel
embeddings: every record holds the embedding of the image and of its
vertically flipped counterpart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torchvision
from torch.utils.data import DataLoader, Dataset
from torchvision import transforms
from torchvision.transforms import functional as tvf

from .fse import Fse1Writer

CIFAR100_MEAN = (0.5071, 0.4865, 0.4409)
CIFAR100_STD = (0.2673, 0.2564, 0.2762)


@dataclass(frozen=True)
class ExportJob:
    dataset: str            # "cifar100" or "fake"
    split: str              # "train" or "test"
    backbone: str = "resnet18"
    weights: str = "pretrained"  # "pretrained", "random", or a state-dict path
    output: str = "embeddings.fse"
    batch_size: int = 64
    data_root: str = "./data"
    seed: int = 0
    fake_classes: int = 100
    fake_per_class: int = 100
    fake_image_size: int = 32


class FakeImages(Dataset):
    """Deterministic random RGB images, labels grouped per class.

    Stands in for real datasets in offline smoke tests; image ``i`` is drawn
    from a generator seeded with (seed, i), so any subset is reproducible.
    """

    def __init__(self, classes: int, per_class: int, image_size: int = 32, seed: int = 0):
        self.classes = classes
        self.per_class = per_class
        self.image_size = image_size
        self.seed = seed

    def __len__(self):
        return self.classes * self.per_class

    def __getitem__(self, index: int):
        gen = torch.Generator().manual_seed(self.seed * 1_000_003 + index)
        image = torch.rand((3, self.image_size, self.image_size), generator=gen)
        return image, index // self.per_class


def load_backbone(name: str, weights: str, seed: int = 0) -> tuple[torch.nn.Module, int]:
    """A torchvision classifier with its head removed: returns pooled features.

    ``weights``: "pretrained" (torchvision default weights), "random"
    (seeded initialization), or a path to a saved state dict.
    """
    factory = getattr(torchvision.models, name, None)
    if factory is None:
        raise ValueError(f"unknown backbone {name!r}")
    if weights == "pretrained":
        model = factory(weights="DEFAULT")
    elif weights == "random":
        torch.manual_seed(seed)
        model = factory(weights=None)
    else:
        model = factory(weights=None)
        state = torch.load(weights, map_location="cpu")
        model.load_state_dict(state)
    if not hasattr(model, "fc"):
        raise ValueError(f"backbone {name!r} has no final fc head to strip")
    width = model.fc.in_features
    model.fc = torch.nn.Identity()
    model.eval()
    return model, width


def resolve_dataset(job: ExportJob) -> Dataset:
    if job.dataset == "fake":
        return FakeImages(
            job.fake_classes, job.fake_per_class, job.fake_image_size, job.seed
        )
    if job.dataset == "cifar100":
        transform = transforms.Compose(
            [transforms.ToTensor(), transforms.Normalize(CIFAR100_MEAN, CIFAR100_STD)]
        )
        return torchvision.datasets.CIFAR100(
            root=job.data_root,
            train=job.split == "train",
            download=True,
            transform=transform,
        )
    raise ValueError(f"unknown dataset {job.dataset!r}")


@torch.no_grad()
def export_records(model: torch.nn.Module, width: int, dataset: Dataset, job: ExportJob) -> int:
    """Embed every image and its vertical flip, streaming FSE1 records."""
    loader = DataLoader(dataset, batch_size=job.batch_size, shuffle=False, num_workers=0)
    written = 0
    with Fse1Writer(job.output, dim=width, split=job.split) as writer:
        for images, labels in loader:
            feats = model(images)
            flipped = model(tvf.vflip(images))
            writer.write_batch(
                labels.numpy(),
                feats.numpy().astype(np.float32),
                flipped.numpy().astype(np.float32),
            )
            written += images.shape[0]
    return written


def export(job: ExportJob) -> int:
    """Full job: resolve dataset and backbone, write the embedding file.

    Returns the number of records written.
    """
    model, width = load_backbone(job.backbone, job.weights, job.seed)
    dataset = resolve_dataset(job)
    return export_records(model, width, dataset, job)
