"""
Peak memory and time against sequence length
============================================

A small version of the ``fipa scaling`` sweep. Peak memory is the tracked
buffer ledger, so the numbers are exact byte counts, not RSS samples.
"""

from flashipa.bench import SweepSpec, cmd_scaling, quadratic_share
from flashipa.model_io import BenchConfig

spec = SweepSpec(lengths=(128, 256, 512, 1024, 2048), precision="f32", repeats=1)
report = cmd_scaling(spec, BenchConfig(), seed=0)

print(f"{'arm':10s} {'L':>6s} {'peak MB':>10s} {'seconds':>9s}")
for r in report.records:
    print(f"{r.arm:10s} {r.L:6d} {r.peak_bytes / 1e6:10.2f} {r.seconds:9.4f}")

# y = a L^2 + b L fits, in MB
for arm, fit in report.fits.items():
    mem = fit["memory_mb"]
    share = quadratic_share(mem, fit["L_max"])
    print(f"{arm}: a={mem['a']:.3e} b={mem['b']:.3e}  quadratic share at L={fit['L_max']}: {share:.1%}")

for check in report.checks:
    print("PASS" if check.passed else "FAIL", check.name, f"{check.value:.3g}")
