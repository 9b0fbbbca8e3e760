import pytest
import torch

# Single-threaded torch keeps gradient checks and training runs bitwise
# reproducible across invocations.
torch.set_num_threads(1)


@pytest.fixture
def rng_seed():
    return 1234
