import pytest
import torch

from qnetsim.device import load_device_config
from qnetsim.hilbert import HilbertSpace


@pytest.fixture(scope="session")
def device():
    return load_device_config()


@pytest.fixture
def generator():
    return torch.Generator().manual_seed(1234)


@pytest.fixture
def two_qubits():
    return HilbertSpace.qubits(["q0", "q1"])


@pytest.fixture
def three_qubits():
    return HilbertSpace.qubits(["q0", "q1", "q2"])
