"""Damped Bloch oscillations on a tilted lattice.

A Gaussian packet on a 127-site lattice oscillates under the static force
F = -0.1.  Recoil kicks from spontaneous emission dephase neighbouring
Wannier states, so the ensemble-averaged velocity decays as exp(-gamma t)
while <v^2> heats towards v0^2 / 2.  The classical recoil-kick model gives
the same envelope and serves as an independent check.

Run with ``python demos/01_damped_bloch_oscillation.py`` (about 10 s).
"""
import math

import numpy as np

from blochdamp.analysis import classical_velocity_exact, fit_envelope_decay
from blochdamp.experiments import preset_configs, run_experiment
from blochdamp.config import apply_overrides

(cfg,) = preset_configs("fig1", n_traj=500)
cfg = apply_overrides(cfg, ["run.t_total=80.0", "run.batch_size=50"])
res = run_experiment(cfg)
s = res.series
p = cfg.tb_params()

print(f"Bloch period {p.bloch_period:.1f}, gamma {p.gamma}, {s.n_traj} trajectories")
print(f"{'t':>6} {'<v>':>9} {'stderr':>8} {'classical':>10} {'<v^2>':>7}")
exact = classical_velocity_exact(p, s.t)
for k in range(0, len(s.t), max(1, len(s.t) // 16)):
    print(f"{s.t[k]:6.1f} {s.v[k]:9.4f} {s.v_err[k]:8.4f} {exact[k]:10.4f} {s.v2[k]:7.3f}")

fit = fit_envelope_decay(s.t, s.v, p.bloch_period, s.v_err)
print(f"\nfitted envelope rate {fit.estimate:.4f} +- {fit.stderr:.4f} (gamma = {p.gamma})")
print(f"<v^2> at t={s.t[-1]:.0f}: {s.v2[-1]:.3f}; stationary value pi^2/2 = {math.pi**2 / 2:.3f}")
print(f"max |<v>| amplitude over first cycle: {np.abs(s.v[: len(s.t) // 6]).max():.3f} (v0 = pi)")
