import numpy as np
import pytest

from fefkit.markov import FaultChannel
from fefkit.realize import FefRealization, fef_from_predictor
from fefkit.sysmodel import PredictorModel, spectral_radius


def scalar_predictor():
    return PredictorModel(Phi=np.array([[0.5]]), Btilde=np.array([[1.0]]), Etilde=np.zeros((1, 0)),
                          K=np.array([[0.2]]), C=np.array([[1.0]]), D=np.array([[0.0]]),
                          G=np.zeros((1, 0)), SigmaE=np.eye(1))


def random_predictor(rng, n=None, ny=None, nu=None, radius=(0.3, 0.9)):
    n = int(rng.integers(1, 6)) if n is None else n
    ny = int(rng.integers(1, 4)) if ny is None else ny
    nu = int(rng.integers(1, 3)) if nu is None else nu
    A = rng.standard_normal((n, n))
    A *= rng.uniform(*radius) / max(spectral_radius(A), 1e-9)
    S = rng.standard_normal((ny, ny))
    return PredictorModel(Phi=A, Btilde=rng.standard_normal((n, nu)), Etilde=np.zeros((n, 0)),
                          K=0.5 * rng.standard_normal((n, ny)), C=rng.standard_normal((ny, n)),
                          D=np.zeros((ny, nu)), G=np.zeros((ny, 0)),
                          SigmaE=S @ S.T + 0.1 * np.eye(ny))


def random_faults(rng, pred, nf=None):
    nf = int(rng.integers(1, min(2, pred.ny) + 1)) if nf is None else nf
    out = []
    for i in range(nf):
        if i < pred.nu and rng.random() < 0.5:
            out.append(FaultChannel("actuator", i))
        else:
            out.append(FaultChannel("sensor", i))
    return out


def random_instance(seed, stable_inverse=False, residual=False, max_tries=200):
    """Random stable predictor with a valid fault subsystem.

    With ``stable_inverse`` only instances whose open-loop left inverse is
    stable are accepted (the fault subsystem has no unstable invariant zeros).
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        pred = random_predictor(rng)
        faults = random_faults(rng, pred)
        if residual and pred.ny <= len(faults):
            continue
        try:
            real = fef_from_predictor(pred, faults=faults)
        except Exception:
            continue
        if stable_inverse and spectral_radius(real.Phi1) >= 0.98:
            continue
        return pred, faults, real
    raise RuntimeError("no admissible instance")


@pytest.fixture
def scalar_pred():
    return scalar_predictor()


@pytest.fixture(scope="session")
def vtol():
    from fefkit.bench import build_vtol
    return build_vtol()


# Every realization built anywhere in the suite is recorded and checked for
# Pi @ C2 = 0 and Pi @ D2 = 0 when the test that built it finishes.
PI_TOL = 1e-8
REALIZATIONS = []
_init = FefRealization.__init__


def _recording_init(self, *args, **kwargs):
    _init(self, *args, **kwargs)
    REALIZATIONS.append(self)


FefRealization.__init__ = _recording_init


@pytest.fixture(autouse=True)
def _pi_guard():
    start = len(REALIZATIONS)
    yield
    for real in REALIZATIONS[start:]:
        a, b = real.pi_residuals()
        assert a <= PI_TOL and b <= PI_TOL, f"Pi C2 / Pi D2 residuals {a:.3g}, {b:.3g}"


# One line per acceptance criterion, echoed at the end of the session.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
