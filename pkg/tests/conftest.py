import pytest

from gazeinfer import convnet


@pytest.fixture(scope="session")
def vspec():
    return convnet.vgg16_spec()


@pytest.fixture(scope="session")
def bundle():
    """One seeded random-weight bundle shared by the whole session.

    Building the full topology costs a couple of seconds, so tests reuse
    this instead of generating their own.
    """
    return convnet.random_bundle(2026)
