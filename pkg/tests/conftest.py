import pytest
import torch

from auglearn.data import DomainTransform, SyntheticSpec, generate


@pytest.fixture(autouse=True, scope="session")
def _single_thread():
    torch.set_num_threads(1)


TINY_DOMAINS = (
    DomainTransform("d0", 0.0, (1.0, 0.8, 0.6), 0.10, 0.0),
    DomainTransform("d1", 12.0, (0.6, 1.0, 0.8), 0.22, 0.03),
    DomainTransform("d2", -12.0, (0.8, 0.6, 1.0), 0.16, 0.06),
)


def tiny_spec(samples_per_class=2, classes=10, domains=TINY_DOMAINS):
    return SyntheticSpec(
        domains=domains, classes=classes, samples_per_class=samples_per_class, image_hw=(16, 16)
    )


@pytest.fixture(scope="session")
def tiny_domains():
    """Three small 16x16 domains: 10 classes x 2 samples each."""
    return generate(tiny_spec(), seed=0)
