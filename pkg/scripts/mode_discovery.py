"""How often a chain ends at the mode, annealed vs fixed temperature.

Prints the exact probability (from the transition-matrix oracle) next to
the empirical fraction over seeded runs, for several step counts.
"""
import argparse

import numpy as np

from anneal_decode.core import GenerationBudget
from anneal_decode.models import load_tabular
from anneal_decode.oracle import annealed_final_distribution, mode_of, power_distribution
from anneal_decode.sampler import ChainConfig, run_chain
from anneal_decode.schedules import constant, parse_schedule, temperature_at


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="M2prime")
    ap.add_argument("--schedule", default="exp:0.90:0.25")
    ap.add_argument("--control", type=float, default=0.90, help="fixed temperature for the control")
    ap.add_argument("--steps", default="10,50,200")
    ap.add_argument("--runs", type=int, default=500)
    ap.add_argument("--proposal-temp", type=float, default=None)
    args = ap.parse_args()

    model = load_tabular(args.model)
    L = model.max_len
    cfg = ChainConfig(GenerationBudget(L, L, 1), granularity="token", proposal_temp=args.proposal_temp)
    print("schedule,K,exact,empirical,stationary_at_end")
    for K in map(int, args.steps.split(",")):
        for sched in (parse_schedule(args.schedule, K), constant(args.control, K)):
            taus = [temperature_at(sched, k) for k in range(K + 1)]
            dist, law = annealed_final_distribution(model, taus, args.proposal_temp, max_new_tokens=L)
            modes = mode_of(dist)
            exact = sum(law[dist.index()[m]] for m in modes)
            end = power_distribution(dist, 1 / taus[-1])
            stationary = sum(end.prob(m) for m in modes)
            hits = sum(
                run_chain(model, [], sched, cfg, np.random.default_rng(s))[0].seq.generated in modes
                for s in range(args.runs)
            )
            print(f"{sched},{K},{exact:.4f},{hits / args.runs:.4f},{stationary:.4f}")


if __name__ == "__main__":
    main()
