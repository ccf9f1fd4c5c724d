import numpy as np
import pytest
import torch
from PIL import Image
from torchvision import models

# 12 bundled scikit-image photos in three class subdirectories; grayscale
# and binary ones exercise the RGB conversion path
_PHOTOS = {
    "people": ["astronaut", "camera"],
    "things": ["coffee", "coins", "page", "clock", "checkerboard"],
    "nature": ["chelsea", "rocket", "moon", "text", "horse"],
}


@pytest.fixture(scope="session")
def image_tree(tmp_path_factory):
    import skimage.data as data

    root = tmp_path_factory.mktemp("images")
    for sub, names in _PHOTOS.items():
        (root / sub).mkdir()
        for i, name in enumerate(names):
            arr = getattr(data, name)()
            if arr.dtype == bool:
                arr = arr.astype(np.uint8) * 255
            suffix = ".jpg" if i % 2 else ".png"
            Image.fromarray(arr).save(root / sub / f"{name}{suffix}")
    return root


@pytest.fixture(scope="session")
def weights_file(tmp_path_factory):
    # a frozen random-init state dict so tests can reconstruct the model
    torch.manual_seed(1234)
    model = models.resnet18(weights=None)
    path = tmp_path_factory.mktemp("weights") / "resnet18.pt"
    torch.save(model.state_dict(), path)
    return path
