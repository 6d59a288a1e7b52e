"""End-to-end exit criteria. Each test prints one PASS/FAIL line with its measurements."""
import time

import numpy as np
import pytest

from fptsnn.backward import finite_difference_gradient, fpt_backward, relative_error
from fptsnn.bench import FPT_PARALLEL, hardware_threads, run_benchmark
from fptsnn.convergence import (contraction_report, convergence_sweep, decay_offdiag_norm,
                                residual_ratios)
from fptsnn.data import generate_synthetic
from fptsnn.forward import FixedPointConfig, SurrogateConfig, fpt_forward
from fptsnn.lif import LifParams, build_decay_matrix, sequential_lif
from fptsnn.neurons import (NO_MASK, LearnableNeuronParams, apply_mask, fpt_generalized_forward,
                            psn_forward, psu_forward)
from fptsnn.network import (Network, NetworkSpec, TrainHyper, evaluate, firing_rate,
                            output_cosine_similarity, train)

pytestmark = pytest.mark.acceptance

P = LifParams(0.25, 1.0)


@pytest.fixture
def verdict(capsys):
    start = time.perf_counter()

    def report(number, checks, limit, detail):
        elapsed = time.perf_counter() - start
        checks = dict(checks, runtime=elapsed < limit)
        ok = all(checks.values())
        failed = [k for k, v in checks.items() if not v]
        with capsys.disabled():
            line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({elapsed:.1f}s / {limit}s) {detail}"
            if failed:
                line += f" failed={failed}"
            print("\n" + line)
        assert ok, failed
    return report


def test_criterion_01_convergence_in_iterations(verdict):
    curves = convergence_sweep(7, P, 32, "iterations", range(1, 7), trials=30, alpha=12.0)
    err = [p.mean_abs_potential_error for p in curves.points]
    spk = [p.spike_error_rate for p in curves.points]
    verdict(1, {
        "non_increasing_k1_to_k3": err[0] >= err[1] >= err[2],
        "k3_to_k6_change_below_1e-6": abs(err[2] - err[5]) < 1e-6,
        # the plateau is the K=6 spike error, pinned at zero by the oracle runs
        "k3_spike_error_at_plateau": spk[2] <= spk[5] and spk[2] < 1e-3,
    }, 10, f"abs_err={[f'{e:.3g}' for e in err]} spike_err={[f'{s:.3g}' for s in spk]} "
           f"|e3-e6|={abs(err[2] - err[5]):.3g}")


def test_criterion_02_convergence_in_alpha(verdict):
    curves = convergence_sweep(7, P, 32, "alpha", [2, 4, 8, 12], trials=30, k=3)
    err = [p.mean_abs_potential_error for p in curves.points]
    spk = [p.spike_error_rate for p in curves.points]
    verdict(2, {
        "abs_error_non_increasing": all(b <= a for a, b in zip(err, err[1:])),
        "spike_error_non_increasing": all(b <= a for a, b in zip(spk, spk[1:])),
    }, 10, f"abs_err={[f'{e:.3g}' for e in err]} spike_err={[f'{s:.3g}' for s in spk]}")


def test_criterion_03_contraction_bound(verdict):
    alphas = [0.5, 1.0, 2.0, 4.0, 8.0, 11.0, 11.9, 11.999999]
    ts = [1, 2, 8, 64, 256, 512, 1024]
    below = all(contraction_report(P, a, t).satisfied for a in alphas for t in ts)
    above = not contraction_report(P, 13.0, 1024).satisfied
    worst = 0.0
    bounded = True
    rng = np.random.default_rng(0)
    for a in alphas:
        for t in (8, 32, 128):
            bound = contraction_report(P, a, t).contraction_constant
            for _ in range(5):
                ratios = residual_ratios(2 * rng.standard_normal(t), P, a, 8)
                if ratios:
                    worst = max(worst, max(r / bound for r in ratios))
                    bounded &= all(r <= bound for r in ratios)
    verdict(3, {"satisfied_below_12": below, "unsatisfied_at_13": above,
                "ratios_within_L": bounded}, 5, f"max ratio/L={worst:.3f}")


def test_criterion_04_gradient_finite_differences(verdict):
    worst = 0.0
    for t in (1, 4, 8, 32):
        for k in (1, 2, 3):
            for alpha in (4.0, 12.0):
                # steepness ratio 1 so the backward is the derivative of the forward map
                cfg = FixedPointConfig.constant(alpha, k, ratio=1.0)
                rng = np.random.default_rng(1000 * t + 10 * k + int(alpha))
                c, up = rng.standard_normal(t) + 0.5, rng.standard_normal(t)
                g = fpt_backward(fpt_forward(c, P, cfg), up, P, cfg).grad_c
                fd = finite_difference_gradient(c, P, cfg, up, h=1e-5)
                worst = max(worst, relative_error(g, fd))
    verdict(4, {"rel_error_below_1e-4": worst < 1e-4}, 30, f"max_rel_error={worst:.3g}")


def test_criterion_05_parallel_neuron_reductions(verdict):
    rng = np.random.default_rng(5)
    psn_ok = psu_ok = 0
    for _ in range(50):
        t = int(rng.integers(1, 48))
        a = apply_mask(build_decay_matrix(t, rng.uniform(0.1, 0.9)) + 0.2 * rng.standard_normal((t, t)))
        b = rng.uniform(0.5, 1.5, t)
        c = rng.standard_normal(t)
        tr = fpt_generalized_forward(c, LearnableNeuronParams(a, b), FixedPointConfig.constant(12.0, 1))
        psn_ok += np.array_equal(tr.s_star, psn_forward(c, a, b))
        v_th = float(rng.uniform(0.5, 1.5))
        alpha = float(rng.uniform(2, 12))
        p = LearnableNeuronParams(a, np.full(t, v_th), v_th=v_th)
        tr = fpt_generalized_forward(c, p, FixedPointConfig.constant(alpha, 2))
        psu_ok += np.array_equal(tr.s_star, psu_forward(c, a, v_th, alpha))
    verdict(5, {"psn_bitwise": psn_ok == 50, "psu_bitwise": psu_ok == 50}, 5,
            f"psn={psn_ok}/50 psu={psu_ok}/50")


def test_criterion_06_speedup(verdict):
    threads = hardware_threads()
    recs = run_benchmark((8, 64, 512), batch=4, neurons=4, reps=7, threads=threads)
    speed = [r.speedup_vs_sequential for r in recs if r.engine == FPT_PARALLEL]
    checks = {"strictly_increasing": speed[0] < speed[1] < speed[2]}
    # the 5x target is tied to an 8-thread baseline; smaller machines only report it
    if threads >= 8:
        checks["at_least_5x_at_512"] = speed[2] >= 5.0
    verdict(6, checks, 120, f"hardware_threads={threads} speedup={[round(s, 2) for s in speed]}"
            + ("" if threads >= 8 else " (5x target not asserted below 8 threads)"))


def test_criterion_07_training_parity(verdict):
    data = generate_synthetic(2, 100, 16, 32, seed=0)
    rows, checks = [], {}
    for seed in range(3):
        res = {eng: train(NetworkSpec((32, 64, 2), neuron_engine=eng), data,
                          TrainHyper(seed=seed))[1] for eng in ("sequential", "fpt")}
        seq, fpt = res["sequential"], res["fpt"]
        checks[f"seed{seed}_accuracy_gap"] = abs(seq.accuracy - fpt.accuracy) <= 0.02
        checks[f"seed{seed}_both_95"] = min(seq.accuracy, fpt.accuracy) >= 0.95
        checks[f"seed{seed}_rate_gap"] = abs(seq.firing_rate - fpt.firing_rate) <= 0.02
        rows.append(f"seed{seed}: acc {seq.accuracy:.3f}/{fpt.accuracy:.3f} "
                    f"rate {seq.firing_rate:.4f}/{fpt.firing_rate:.4f}")
    verdict(7, checks, 300, "; ".join(rows))


def test_criterion_08_engine_swap(verdict):
    sims = {8: [], 64: []}
    for seed in range(3):
        model, _ = train(NetworkSpec((32, 64, 2), neuron_engine="sequential"),
                         generate_synthetic(2, 100, 8, 32, seed=0), TrainHyper(seed=seed))
        for t in sims:
            # same templates, fresh noise and a longer horizon
            held_out = generate_synthetic(2, 100, t, 32, seed=0)
            sims[t].append(output_cosine_similarity(model, "sequential", "fpt", held_out))
    s8, s64 = float(np.mean(sims[8])), float(np.mean(sims[64]))
    verdict(8, {"similarity_at_8": s8 >= 0.99, "degradation_at_64": s8 - s64 <= 0.002}, 180,
            f"cosine T=8 {s8:.5f} T=64 {s64:.5f}")


def test_criterion_09_iteration_ablation(verdict):
    data = generate_synthetic(2, 100, 16, 32, seed=0)
    accs = {}
    for k in (3, 4, 5):
        cfg = FixedPointConfig(k, SurrogateConfig((3.0,) + (12.0,) * (k - 1)))
        spec = NetworkSpec((32, 64, 2), neuron_engine="fpt", fpt=cfg)
        accs[k] = [train(spec, data, TrainHyper(seed=seed))[1].accuracy for seed in range(3)]
    verdict(9, {"identical_accuracy": accs[3] == accs[4] == accs[5]}, 300, f"accuracy={accs}")


def test_criterion_10_property_suites(verdict):
    norm_err = max(abs(np.linalg.norm(build_decay_matrix(t, lam) - np.eye(t), np.inf)
                       - decay_offdiag_norm(lam, t)) / max(decay_offdiag_norm(lam, t), 1e-300)
                   for t in (1, 2, 3, 16, 100, 512, 1024) for lam in (0.1, 0.25, 0.5, 0.9))

    rng = np.random.default_rng(10)
    c = 1.5 * rng.standard_normal((6, 5, 40))
    tr = sequential_lif(c, P)
    lam = build_decay_matrix(40, P.lam)
    u = -P.v_th * tr.s @ (lam - np.eye(40)).T + c @ lam.T
    identity_err = float(np.max(np.abs(u - tr.u)))

    a = apply_mask(build_decay_matrix(20, 0.4) + 0.2 * rng.standard_normal((20, 20)))
    p = LearnableNeuronParams(a, np.ones(20))
    x = rng.standard_normal(20)
    base = fpt_generalized_forward(x, p, FixedPointConfig())
    causal = True
    for t in range(19):
        bumped = x.copy()
        bumped[t + 1:] += 5 * rng.standard_normal(19 - t)
        out = fpt_generalized_forward(bumped, p, FixedPointConfig())
        causal &= np.array_equal(out.u_star[:t + 1], base.u_star[:t + 1])
    leak = LearnableNeuronParams(a + np.triu(np.full((20, 20), 0.1), 1), np.ones(20), NO_MASK)
    bumped = x.copy()
    bumped[-1] += 3.0
    leaks = (fpt_generalized_forward(x, leak, FixedPointConfig()).u_star[0]
             != fpt_generalized_forward(bumped, leak, FixedPointConfig()).u_star[0])

    cfg = FixedPointConfig(firing_mode="bernoulli", rng_seed=3)
    fw = [fpt_forward(c, P, cfg) for _ in range(2)]
    data = generate_synthetic(2, 20, 8, 32, seed=0)
    spec = NetworkSpec((32, 16, 2), fpt=cfg)
    runs = [train(spec, data, TrainHyper(epochs=3, seed=4))[0] for _ in range(2)]
    sweeps = [convergence_sweep(3, P, 16, "iterations", [1, 2, 3], trials=3).points for _ in range(2)]
    deterministic = (np.array_equal(fw[0].s_star, fw[1].s_star)
                     and all(np.array_equal(runs[0].params[k], runs[1].params[k]) for k in runs[0].params)
                     and evaluate(runs[0], data) == evaluate(runs[1], data)
                     and firing_rate(runs[0], data) == firing_rate(runs[1], data)
                     and [q.mean_abs_potential_error for q in sweeps[0]]
                     == [q.mean_abs_potential_error for q in sweeps[1]])
    fresh = Network.init(spec, 8, seed=4)
    deterministic &= np.array_equal(fresh.forward(data.inputs), Network.init(spec, 8, seed=4).forward(data.inputs))

    verdict(10, {"norm_closed_form_1e-12": norm_err < 1e-12,
                 "matrix_identity_1e-10": identity_err < 1e-10,
                 "mask_causality": causal and leaks,
                 "determinism": deterministic}, 60,
            f"norm_rel_err={norm_err:.2g} identity_err={identity_err:.2g}")
