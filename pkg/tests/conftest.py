import numpy as np
import pytest

from rslsgrid import gridmodel, harness
from rslsgrid.harness import FIXTURE_DIR, load_matrix_bank
from rslsgrid.rsls import LtiSubsystem, ProbingSignal, RslsBank, ScheduleParams


@pytest.fixture(scope="session")
def case5():
    return gridmodel.parse_case(FIXTURE_DIR / "case5.json")


@pytest.fixture(scope="session")
def case5_scenarios():
    return harness.scenarios_from_case_doc(FIXTURE_DIR / "case5.json")


@pytest.fixture(scope="session")
def case33():
    return gridmodel.parse_case(FIXTURE_DIR / "case33.json")


@pytest.fixture(scope="session")
def case2():
    return gridmodel.parse_case(FIXTURE_DIR / "case2_example1.json")


@pytest.fixture(scope="session")
def bank5_derived(case5, case5_scenarios):
    """Bank linearized by the pipeline (stable swing dynamics)."""
    return gridmodel.build_bank(case5, case5_scenarios, [[1.0, 0, 0, 0]])


@pytest.fixture(scope="session")
def bank5_ref():
    """Bank from the reference 5-bus case-study matrices."""
    return load_matrix_bank(FIXTURE_DIR / "matrices_5bus.json",
                            C_default=[[1.0, 0, 0, 0]])


@pytest.fixture(scope="session")
def bank33_ref():
    return load_matrix_bank(FIXTURE_DIR / "matrices_33bus.json",
                            C_default=[[1.0, 0, 0, 0]])


@pytest.fixture(scope="session")
def bank33_packet():
    return load_matrix_bank(FIXTURE_DIR / "matrices_33bus_packet.json")


@pytest.fixture(scope="session")
def sched5():
    return ScheduleParams(tau=2.5, tau0=0.05, ts=0.001)


@pytest.fixture(scope="session")
def sched33():
    return ScheduleParams(tau=4.5, tau0=0.9, ts=0.018)


@pytest.fixture(scope="session")
def sched_packet():
    return ScheduleParams(tau=5.0, tau0=1.0, ts=0.02)


@pytest.fixture(scope="session")
def probe01():
    return ProbingSignal(kind="sine", amplitude=0.1, omega=1.0, channel=0)


def make_example3_bank():
    """Two first-order-pair subsystems sharing the eigenvalue -4; a step
    input cannot tell them apart (both settle at 9/20) but a sinusoid can."""
    A1 = np.diag([-4.0, -5.0])
    A2 = np.diag([-4.0, -10.0])
    B = np.array([[1.0], [1.0]])
    s1 = LtiSubsystem(index=1, A=A1, B1=B, C=np.array([[1.0, 1.0]]))
    s2 = LtiSubsystem(index=2, A=A2, B1=B, C=np.array([[1.0, 2.0]]))
    return RslsBank(subsystems=(s1, s2), p=np.array([0.5, 0.5]))


@pytest.fixture(scope="session")
def example3_bank():
    return make_example3_bank()


def example1_subsystem(C=None):
    """The two-bus system linearized at its equilibrium, with a choice of
    sensor row(s); defaults to the power-transfer sensor of the
    observability discussion (rank-3 observability)."""
    case = gridmodel.parse_case(FIXTURE_DIR / "case2_example1.json")
    model = gridmodel.linearize(case)
    beta_cos = -model.A[1, 0]  # beta * cos(delta_bar) with M1 = 1
    if C is None:
        C = np.array([[beta_cos, 0.0, -beta_cos, 0.0]])
    return LtiSubsystem(index=1, A=model.A, B1=model.B1, C=np.atleast_2d(C))
