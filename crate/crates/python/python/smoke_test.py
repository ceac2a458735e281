"""Smoke test for the spindecay extension module.

Uses an installed `spindecay` module (`maturin develop` or a wheel) when
there is one; otherwise loads the library built by

    cargo build -p spindecay-py --release --features extension-module

from target/release, or from the path in SPINDECAY_PY_LIB.
"""

import importlib.machinery
import importlib.util
import math
import os
import pathlib
import sys


def load():
    if "SPINDECAY_PY_LIB" not in os.environ:
        try:
            import spindecay

            return spindecay
        except ImportError:
            pass
    root = pathlib.Path(__file__).resolve().parents[3]
    default = root / "target" / "release" / "libspindecay_py.so"
    path = pathlib.Path(os.environ.get("SPINDECAY_PY_LIB", default))
    loader = importlib.machinery.ExtensionFileLoader("spindecay", str(path))
    spec = importlib.util.spec_from_file_location("spindecay", path, loader=loader)
    module = importlib.util.module_from_spec(spec)
    loader.exec_module(module)
    return module


sd = load()


def check(name, ok, detail=""):
    print(f"{'ok  ' if ok else 'FAIL'} {name} {detail}")
    return ok


def main():
    results = []

    cu = sd.SpinSystem.cu_mnt()
    report = sd.fsed_report(cu, 9500.0, 2700.0, 3800.0, 0.5, grid_count=1024, bandwidth=100.0)
    feats = report["parallel_features"]
    spacings = [b - a for a, b in zip(feats, feats[1:])]
    results.append(check("spin system", cu.dimension == 8, repr(cu)))
    results.append(check(
        "fsed features",
        500 <= report["support_width"] <= 600 and all(abs(s - 169) <= 10 for s in spacings),
        f"support {report['support_width']:.1f} G, spacings {spacings}",
    ))

    fields, intensity = sd.simulate_fsed(cu, 9500.0, 2700.0, 3800.0, 2.0, grid_count=512)
    true = cu.parameters
    start = (true[0], true[1], true[2] * 1.05, true[3] * 0.95)
    fit = sd.fit_spectrum(fields, intensity, start, 9500.0, grid_count=512, fit_g=False, fit_width=False)
    results.append(check(
        "hyperfine fit",
        abs(fit["A_par"] / true[2] - 1) < 1e-6 and abs(fit["A_perp"] / true[3] - 1) < 1e-6,
        f"A_par {fit['A_par']:.4f}, A_perp {fit['A_perp']:.4f}",
    ))

    hahn = sd.PulseSequence.hahn(1.0, sd.Pulse.half_pi(25.0), sd.Pulse.pi(25.0))
    echo = sd.propagate(hahn)
    results.append(check("hahn echo", abs(echo["signal"] - 1.0) < 1e-9, f"signal {echo['signal']:.12f}"))
    results.append(check("ideal amplifier is identity", hahn.through("ideal", seed=3) == hahn))
    results.append(check(
        "droop endpoints",
        sd.phase_droop("twta", 15.0) == 27.0 and sd.phase_droop("sspa", 800.0) == 3.0,
    ))

    ac = sd.NoiseModel.ac_field(14.3, 0.5)
    taus = [0.0005 * k for k in range(1, 121)]
    trace = sd.cpmg_coherence(ac, 16, taus, realizations=400, seed=1)
    first = sd.coherence_minima(trace)[0]
    predicted = sd.dip_times(16, 14.3, 1)[0]
    results.append(check("dip position", abs(first - predicted) <= 16 * 0.0005, f"{first:.4f} vs {predicted:.4f} us"))
    results.append(check("trace csv round trip", sd.DecayTrace.from_csv(trace.to_csv()).to_csv() == trace.to_csv()))

    quantum = sd.NoiseModel.quantum([(14.3, 0.2, 0.1)])
    sweep = [0.034 + 0.002 * k / 200 for k in range(201)]
    q = sd.cpmg_coherence(quantum, 1024, sweep)
    results.append(check("negative coherence", min(q.coherence) < 0 <= 1 - max(abs(v) for v in q.coherence),
                         f"min {min(q.coherence):.4f}"))

    t = [4.0 * k for k in range(1, 61)]
    decay = sd.DecayTrace(t, [math.exp(-((x / 100.0) ** 1.5)) for x in t])
    st = sd.fit_stretched(decay)
    results.append(check("stretched fit", abs(st["T_coh"] - 100) < 1e-3 and abs(st["beta"] - 1.5) < 1e-5,
                         f"T_coh {st['T_coh']:.6f}, beta {st['beta']:.6f}"))
    sc = sd.fit_scaling([(n, 6.8 * n ** 0.67) for n in (1, 4, 16, 64)])
    results.append(check("scaling fit", abs(sc["alpha"] - 0.67) < 1e-12, f"alpha {sc['alpha']}"))
    temps = [8.0, 12.0, 24.0, 71.0]
    t1 = sd.fit_t1_power([(T, sd.t1_raman(71.0, 0.0304, T)) for T in temps])
    results.append(check("T1 exponent", abs(t1["exponent"] - 3) < 1e-9, f"{t1['exponent']}"))

    dt = 0.002
    series = [math.cos(2 * math.pi * 10.0 * k * dt) for k in range(512)]
    peak = sd.fft_peaks(series, dt)[0]
    results.append(check("fft peak", abs(peak[0] - 10.0) < 0.05, f"{peak[0]:.4f} MHz"))
    results.append(check("figure of merit", abs(sd.figure_of_merit(1400.0, 0.01) - 1.4e5) < 1e-6))

    try:
        sd.NoiseModel.ou(-1.0, 10.0)
        results.append(check("invalid input raises", False))
    except ValueError:
        results.append(check("invalid input raises", True))

    print(f"{sum(results)}/{len(results)} checks passed")
    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
