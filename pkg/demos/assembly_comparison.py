"""Sampled K-L divergence of several filters on a faulty assembly.

A plan of welds, bolts and paint jobs runs with a small fault rate.  Each
filter tracks the hidden state from noisy observations of the objects it
acts on, and is scored per step by the mean negative log probability it
gives the true state.  Infinite scores mark the step a filter lost the
truth entirely.

Run with ``python demos/assembly_comparison.py`` (a few seconds).
"""

from rdbn.assembly import AssemblyConfig
from rdbn.evaluation import ExperimentConfig, MethodSpec, run_experiment

DOMAIN = AssemblyConfig(n_plates=6, n_brackets=4, n_bolts=4, n_values=3, fault_probability=0.05,
                        plan_length=60)
METHODS = (MethodSpec("pf", 500), MethodSpec("spf", 500), MethodSpec("aspf", 500),
           MethodSpec("rbpf", 100))


def main():
    cfg = ExperimentConfig(DOMAIN, METHODS, runs=3, seed=0, shared=True)
    series = run_experiment(cfg, jobs=1)
    checkpoints = [9, 29, 59]
    print(f"{'method':<6} " + " ".join(f"{'step ' + str(t + 1):>9}" for t in checkpoints)
          + "  first blow-up  runs left")
    # means cover only the runs still finite at that step
    for s in series:
        cells = " ".join(f"{s.mean[t]:9.4f}" for t in checkpoints)
        print(f"{s.method:<6} {cells}  {str(s.blowup_step or '-'):>13}  {s.runs[-1]}/{cfg.runs}")
    # smoothing trades some accuracy for never assigning zero probability


if __name__ == "__main__":
    main()
