import numpy as np
import pytest
from hypothesis import settings

# first calls compile numba kernels, so per-example deadlines are meaningless
settings.register_profile("default", deadline=None)
settings.load_profile("default")

from payload_nmpc.coupling import AttachmentGeometry, CoupledSystem, net_wrench_kernel, nominal_formation
from payload_nmpc.scenario import ScenarioSpec, build_system
from payload_nmpc.srb import SrbParams, grf_wrench


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def spec():
    return ScenarioSpec("test", 1.0)


@pytest.fixture(scope="session")
def system(spec):
    return build_system(spec)


@pytest.fixture(scope="session")
def geom():
    return AttachmentGeometry()


@pytest.fixture(scope="session")
def robot_params():
    return SrbParams(15.0, np.diag([0.1, 0.25, 0.3]), "1")


def random_body_state(rng, scale=1.0):
    x = np.zeros(12)
    x[0:3] = rng.normal(0.0, scale, 3)
    x[3:5] = rng.uniform(-0.4, 0.4, 2)
    x[5] = rng.uniform(-np.pi, np.pi)
    x[6:9] = rng.normal(0.0, 0.5 * scale, 3)
    x[9:12] = rng.normal(0.0, 0.5 * scale, 3)
    return x


def assembled_state(geom, payload_p=(0.0, 0.0, 0.33), yaw=0.0):
    """Global state of the assembly at rest in its rigid formation."""
    x = np.zeros(36)
    robots = nominal_formation(geom, np.asarray(payload_p, dtype=float), yaw)
    for i, p in enumerate(robots):
        x[12 * i:12 * i + 3] = p
        x[12 * i + 5] = yaw
    x[24:27] = payload_p
    x[29] = yaw
    return x


def random_global_state(rng, geom, jitter=0.02):
    x = assembled_state(geom, rng.normal(0.0, 1.0, 3) + np.array([0, 0, 0.33]), rng.uniform(-np.pi, np.pi))
    x += rng.normal(0.0, jitter, 36)
    return x


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.abs(a - b).max() / max(1.0, np.abs(b).max()))


def static_grfs(system, x, lam):
    """Vertical stance forces that make each robot's net wrench pure weight support."""
    feet, m, *_ = system.kernel_args()
    ra, rl = system.ra, system.rl
    u = np.zeros(34)
    u[24:] = lam
    grf = np.zeros(24)
    for i in range(2):
        W = net_wrench_kernel(x, u, np.zeros((2, 4)), feet, ra, rl)[i]
        target = np.array([0, 0, m[i] * system.g, 0, 0, 0]) - W
        _, E, _ = grf_wrench(x[12 * i + 3:12 * i + 6], feet, np.ones(4), np.zeros(12))
        cols = [2, 5, 8, 11]
        fz, *_ = np.linalg.lstsq(E[:, cols], target, rcond=None)
        assert np.abs(E[:, cols] @ fz - target).max() < 1e-9
        grf[12 * i + 2:12 * i + 12:3] = fz
    return grf


def lq_oracle(x0, x_ref, q, p, r, m, N, Ts, g):
    """Dense KKT solve of the translational double integrator (force held over each step)."""
    nx, nu = 6, 3
    A = np.eye(6)
    A[0:3, 3:6] = Ts * np.eye(3)
    B = np.vstack([0.5 * Ts ** 2 / m * np.eye(3), Ts / m * np.eye(3)])
    c = np.concatenate([np.array([0, 0, -0.5 * g * Ts ** 2]), np.array([0, 0, -g * Ts])])
    nz = nx * (N + 1) + nu * N
    H = np.zeros((nz, nz))
    f = np.zeros(nz)
    for k in range(N + 1):
        w = p if k == N else q
        sl = slice(nx * k, nx * (k + 1))
        H[sl, sl] = np.diag(2.0 * w)
        f[sl] = -2.0 * w * x_ref[k]
    u0 = nx * (N + 1)
    for k in range(N):
        sl = slice(u0 + nu * k, u0 + nu * (k + 1))
        H[sl, sl] = np.diag(2.0 * r)
    Aeq = np.zeros((nx * (N + 1), nz))
    beq = np.zeros(nx * (N + 1))
    Aeq[0:nx, 0:nx] = np.eye(nx)
    beq[0:nx] = x0
    for k in range(N):
        rows = slice(nx * (k + 1), nx * (k + 2))
        Aeq[rows, nx * (k + 1):nx * (k + 2)] = np.eye(nx)
        Aeq[rows, nx * k:nx * (k + 1)] = -A
        Aeq[rows, u0 + nu * k:u0 + nu * (k + 1)] = -B
        beq[rows] = c
    K = np.block([[H, Aeq.T], [Aeq, np.zeros((len(beq), len(beq)))]])
    sol = np.linalg.solve(K, np.concatenate([-f, beq]))[:nz]
    X = sol[:u0].reshape(N + 1, nx)
    U = sol[u0:].reshape(N, nu)
    return X, U


def lq_case(seed, params, N=8, Ts=1.0 / 60.0, g=9.81):
    """Random unconstrained single-body LQ instance solved by the SQP and by the dense oracle."""
    from payload_nmpc.nmpc import SingleBodyOcp, solve

    rng = np.random.default_rng(seed)
    x0 = np.zeros(12)
    x0[0:3] = rng.normal(0.0, 0.1, 3)
    x0[6:9] = rng.normal(0.0, 0.2, 3)
    x_ref = np.zeros((N + 1, 12))
    x_ref[:, 0:3] = rng.normal(0.0, 0.1, 3)
    x_ref[:, 6:9] = rng.normal(0.0, 0.3, (N + 1, 3))
    q = np.concatenate([rng.uniform(1.0, 100.0, 6), rng.uniform(1.0, 10.0, 3), rng.uniform(0.1, 1.0, 3)])
    p = 10.0 * q
    r = rng.uniform(1e-4, 1e-2, 6)
    res = solve(SingleBodyOcp(x0, x_ref, params, q, p, r, N=N, Ts=Ts, g=g), max_iter=10)
    tr = [0, 1, 2, 6, 7, 8]
    Xo, Uo = lq_oracle(x0[tr], x_ref[:, tr], q[tr], p[tr], r[:3], params.mass, N, Ts, g)
    return {"status": res.status, "states": rel_err(res.X[:, tr], Xo), "forces": rel_err(res.U[:, :3], Uo),
            "torques": float(np.abs(res.U[:, 3:]).max()),
            "attitude": float(np.abs(res.X[:, [3, 4, 5, 9, 10, 11]]).max())}
