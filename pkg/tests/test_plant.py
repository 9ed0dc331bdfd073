import dataclasses

import numpy as np
import pytest

from payload_nmpc.coupling import phi_kernel
from payload_nmpc.errors import ConstraintBlowup
from payload_nmpc.export import load_log, save_log
from payload_nmpc.plant import Disturbance, PlantConfig, measure, plant_step, reconstruct_payload, run_closed_loop
from payload_nmpc.scenario import (ScenarioSpec, build_controller, build_plant, build_system, initial_state,
                                   load_scenario, resolve_scenario)
from payload_nmpc.summary import summarize

from conftest import assembled_state, static_grfs

ALL_STANCE = np.ones((2, 4))
NO_STANCE = np.zeros((2, 4))


@pytest.fixture(scope="module")
def true_system():
    return build_system(ScenarioSpec("plant", 1.0), true=True)


def _rigid_motion(x, v, wz):
    """Give the assembly a common velocity and yaw rate about the payload CoM."""
    y = x.copy()
    pL = x[24:27]
    w = np.array([0.0, 0.0, wz])
    for b in range(3):
        o = 12 * b
        y[o + 6:o + 9] = v + np.cross(w, x[o:o + 3] - pL)
        y[o + 9:o + 12] = w
    return y


def test_static_equilibrium_holds_for_one_second(true_system):
    cfg = PlantConfig(true_system)
    x0 = assembled_state(true_system.geometry)
    lam = np.array([0, 0, -true_system.masses[2] * true_system.g / 2, 0, 0] * 2)
    grf = static_grfs(true_system, x0, lam)
    x = x0.copy()
    for k in range(60):
        x, lam_k = plant_step(x, grf, ALL_STANCE, cfg, k * cfg.Ts)
    assert np.abs(x - x0).max() < 1e-9
    assert np.abs(lam_k - lam).max() < 1e-6


def test_static_equilibrium_tipping_rate(true_system):
    """Held world-frame forces at feet below the CoM make the rest pose an inverted pendulum.

    Oracle: the rigid assembly rolling about the x axis through its CoM grows
    at sqrt(M g z_c / I_x), z_c the CoM height above the feet.
    """
    cfg = PlantConfig(true_system)
    x0 = assembled_state(true_system.geometry)
    lam = np.array([0, 0, -true_system.masses[2] * true_system.g / 2, 0, 0] * 2)
    grf = static_grfs(true_system, x0, lam)
    m = true_system.masses
    z = x0[[2, 14, 26]]
    zc = float(m @ z / m.sum())
    Ix = sum(true_system.inertias[b][0, 0] + m[b] * (z[b] - zc) ** 2 for b in range(3))
    rate = np.sqrt(m.sum() * true_system.g * zc / Ix)
    x = x0.copy()
    x[[3, 15, 27]] += 1e-9
    dev = []
    for k in range(30):
        x, _ = plant_step(x, grf, ALL_STANCE, cfg, k * cfg.Ts)
        dev.append(np.abs(x - x0).max())
    measured = np.log(dev[29] / dev[14]) / (15 * cfg.Ts)
    assert abs(measured / rate - 1.0) < 0.03


def test_free_fall_is_rigid(true_system):
    cfg = PlantConfig(true_system)
    x = assembled_state(true_system.geometry)
    g = true_system.g
    worst = 0.0
    for k in range(30):
        x, lam = plant_step(x, np.zeros(24), NO_STANCE, cfg, k * cfg.Ts)
        worst = max(worst, np.abs(phi_kernel(x, true_system.ra, true_system.rl)).max())
        # all bodies share the gravity acceleration, so the links carry nothing
        assert np.abs(lam).max() < 1e-8
    assert worst < 1e-8
    T = 30 * cfg.Ts
    for b in range(3):
        assert abs(x[12 * b + 8] + g * T) < 1e-9
        assert np.abs(x[12 * b + 9:12 * b + 12]).max() < 1e-9


def test_push_impulse_momentum(true_system):
    dist = (Disturbance(0.0, 0.3, 1, (0.0, 80.0, 0.0)),)
    cfg = PlantConfig(true_system, disturbances=dist)
    x = assembled_state(true_system.geometry)
    m = true_system.masses
    for k in range(30):
        x, _ = plant_step(x, np.zeros(24), NO_STANCE, cfg, k * cfg.Ts)
    p_y = sum(m[b] * x[12 * b + 7] for b in range(3))
    assert abs(p_y - 80.0 * 0.3) / (80.0 * 0.3) < 0.02
    vcom = p_y / m.sum()
    assert abs(vcom - 24.0 / m.sum()) < 0.02 * 24.0 / m.sum()
    assert np.abs(phi_kernel(x, true_system.ra, true_system.rl)).max() < 1e-6


def test_disturbance_windows():
    d = Disturbance(1.0, 0.3, 1, (0.0, 80.0, 0.0))
    assert not d.active(0.99)
    assert d.active(1.0) and d.active(1.29)
    assert not d.active(1.3)


def test_halving_plant_step_converges(true_system, rng):
    x0 = _rigid_motion(assembled_state(true_system.geometry), np.array([0.2, 0.05, 0.0]), 0.1)
    lam = np.array([0, 0, -true_system.masses[2] * true_system.g / 2, 0, 0] * 2)
    base = static_grfs(true_system, assembled_state(true_system.geometry), lam)
    seq = [base + np.tile([rng.normal(0, 3), rng.normal(0, 3), rng.normal(0, 5)], 8) for _ in range(30)]
    finals = []
    for sub in (16, 32):
        cfg = PlantConfig(true_system, substeps=sub)
        x = x0.copy()
        for k, u in enumerate(seq):
            x, _ = plant_step(x, u, ALL_STANCE, cfg, k * cfg.Ts)
        finals.append(x)
    assert np.abs(finals[0] - finals[1]).max() < 1e-5


def test_blowup_is_raised(true_system):
    cfg = PlantConfig(true_system, phi_limit=1e-16)
    x = assembled_state(true_system.geometry)
    x[0] += 0.01
    with pytest.raises(ConstraintBlowup):
        plant_step(x, np.zeros(24), NO_STANCE, cfg, 0.0)


def test_substeps_validated(true_system):
    with pytest.raises(ValueError):
        PlantConfig(true_system, substeps=0)


# -- measurement ------------------------------------------------------------

def test_exact_measurement_is_identity(rng, true_system):
    x = rng.normal(0.0, 1.0, 36)
    assert np.array_equal(measure(x), x)
    assert np.array_equal(measure(x, true_system, "exact"), x)


def test_unknown_measurement_mode(true_system):
    with pytest.raises(ValueError):
        measure(np.zeros(36), true_system, "magic")


def test_reconstruction_on_consistent_configurations(true_system, rng):
    geom = true_system.geometry
    worst = 0.0
    for _ in range(200):
        x = assembled_state(geom, rng.normal(0.0, 2.0, 3) + [0, 0, 0.33], rng.uniform(-np.pi, np.pi))
        x = _rigid_motion(x, rng.normal(0.0, 0.5, 3), rng.normal(0.0, 0.5))
        assert np.abs(phi_kernel(x, true_system.ra, true_system.rl)).max() < 1e-12
        y = reconstruct_payload(x, true_system)
        d = y - x[24:36]
        d[5] = (d[5] + np.pi) % (2 * np.pi) - np.pi
        worst = max(worst, np.abs(d).max())
    assert worst < 1e-9


def test_reconstruction_noise_amplification(true_system):
    """1 mm robot position noise: the payload position averages two attachments."""
    geom = true_system.geometry
    x = assembled_state(geom, (1.0, -0.5, 0.33), 0.7)
    rng = np.random.default_rng(7)
    sigma = 1e-3
    errs, yaw = [], []
    for _ in range(2000):
        y = measure(x, true_system, "reconstruct", noise_std=sigma, rng=rng)
        errs.append(y[24:27] - x[24:27])
        yaw.append(y[29] - x[29])
    rms = np.sqrt(np.mean(np.square(errs), axis=0))
    # averaging two independent attachments gives sigma / sqrt(2) per axis
    assert np.all(rms < sigma)
    assert np.all(np.abs(rms / (sigma / np.sqrt(2.0)) - 1.0) < 0.1)
    # yaw error: two lateral noises over the 0.9 m attachment span
    span = np.linalg.norm(geom.payload_offsets[1] - geom.payload_offsets[0])
    assert abs(np.std(yaw) / (np.sqrt(2.0) * sigma / span) - 1.0) < 0.1


# -- closed loop ------------------------------------------------------------

def test_zero_length_run_gives_empty_valid_log(tmp_path):
    spec = ScenarioSpec("empty", 0.0, obstacles=((1.0, 0.0),))
    log = run_closed_loop(spec)
    assert len(log) == 0
    assert log.x.shape == (0, 36)
    assert log.h.shape == (0, 3, 1)
    assert log.meta["completion"] == "completed"
    save_log(log, tmp_path)
    back = load_log(tmp_path)
    assert len(back) == 0
    s = summarize(back)
    assert s.n_ticks == 0 and s.completion == "completed"


def test_blowup_truncates_log():
    spec = load_scenario(resolve_scenario("hover")).with_overrides(duration_s=0.2)
    plant = dataclasses.replace(build_plant(spec), phi_limit=-1.0)
    log = run_closed_loop(spec, plant=plant)
    assert log.meta["completion"] == "blowup"
    assert "holonomic residual" in log.meta["message"]
    assert len(log) == 1
    assert np.isnan(log.lam_plant[-1]).all()


def test_short_closed_loop_is_uniform_and_consistent():
    spec = load_scenario(resolve_scenario("single_obstacle")).with_overrides(duration_s=0.5)
    ticks = []
    log = run_closed_loop(spec, on_tick=lambda k, t, x, res: ticks.append(k))
    n = int(round(0.5 / spec.dt_s))
    assert len(log) == n and ticks == list(range(n))
    assert np.allclose(np.diff(log.t), spec.dt_s)
    assert np.all(np.diff(log.t) > 0)
    assert np.abs(log.phi).max() < 1e-6
    assert log.h.shape == (n, 3, 1)
    assert set(log.status) == {"converged"}


def test_plant_uses_true_parameters_controller_nominal():
    spec = load_scenario(resolve_scenario("experiment2_mass"))
    assert build_plant(spec).system.masses[2] == pytest.approx(11.2)
    assert build_controller(spec).system.masses[2] == pytest.approx(5.0)
    nominal = load_scenario(resolve_scenario("experiment1_nominal"))
    assert build_plant(nominal).system.masses[2] == pytest.approx(5.0)


def test_initial_state_satisfies_constraints():
    for name in ("experiment1_nominal", "experiment4a_layout", "hover"):
        spec = load_scenario(resolve_scenario(name))
        sysm = build_system(spec)
        x = initial_state(spec)
        assert np.abs(phi_kernel(x, sysm.ra, sysm.rl)).max() < 1e-12
