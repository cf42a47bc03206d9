from .cifar import RECORD_BYTES, load_cifar10, read_cifar_batch
from .imagefolder import ImageFolderSource, load_imagefolder
from .loader import (
    DATASET_KINDS,
    ArrayDataset,
    DataBundle,
    DatasetKind,
    DatasetSource,
    EpochSampler,
    PreparedView,
    epoch_permutation,
    make_loader,
    open_dataset,
    sample_generator,
)
from .mnist import load_mnist, read_idx_images, read_idx_labels
from .transforms import (
    NORM_STATS_FILE,
    augment_train,
    cached_norm_stats,
    channel_stats,
    denormalize,
    eval_transform,
    hflip,
    normalize,
)

__all__ = [
    "RECORD_BYTES",
    "load_cifar10",
    "read_cifar_batch",
    "ImageFolderSource",
    "load_imagefolder",
    "DATASET_KINDS",
    "ArrayDataset",
    "DataBundle",
    "DatasetKind",
    "DatasetSource",
    "EpochSampler",
    "PreparedView",
    "epoch_permutation",
    "make_loader",
    "open_dataset",
    "sample_generator",
    "load_mnist",
    "read_idx_images",
    "read_idx_labels",
    "NORM_STATS_FILE",
    "augment_train",
    "cached_norm_stats",
    "channel_stats",
    "denormalize",
    "eval_transform",
    "hflip",
    "normalize",
]
