"""From the eps-problem to the homogenized solution.

A reduced convergence study compares u_eps with exp(Vbar t) P_t u0 over
the window [-2, 2] x [0.1, 1], then turns the CSV into plot data.  The
full-size study is ``homoglab converge --config configs/converge.toml``.
"""

from homoglab import harness

cfg = harness.ExperimentConfig(eps_ladder=(0.25, 0.125, 0.0625), n_realizations=8,
                               out_dir="out/demos/converge")

# %% run the study; each realization has its own derived seed
res = harness.run_convergence_study(cfg)
print(" eps       median |u_eps - u|   median sup|Y|   median sup|Z|")
for row in res.summary:
    print(f"{row[0]:<8g}  {row[2]:18.4f}  {row[5]:14.4f}  {row[8]:14.4f}")

# %% log-log slopes are recorded, not asserted
for name, fit in res.fits.items():
    print(f"{name}: slope {fit.slope:+.3f}")

# %% plot data: one .dat series per quantity and an SVG
paths, _ = harness.emit_plot_data(res.paths["records"])
for name, p in paths.items():
    print(name, "->", p)
