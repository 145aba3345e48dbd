"""How much does critique quality matter when revising with an imperfect verifier?

The simulator models repeated refinement as a two-state Markov chain: a
solution is correct or wrong, each revision round moves it with
probabilities p_cc (stays correct) and p_cw (gets fixed), and a noisy
verifier (true-positive rate / false-positive rate) decides which attempt
to submit.  No models are involved; this is the cheapest way to build
intuition for the full pipeline's behavior.
"""
from critloop import sim

CHAINS = {
    "no critique    ": sim.ChainParams(p_init=0.1, p_cc=0.1, p_cw=0.1),
    "weak critique  ": sim.ChainParams(p_init=0.1, p_cc=0.7, p_cw=0.15),
    "strong critique": sim.ChainParams(p_init=0.1, p_cc=0.9, p_cw=0.3),
}
VERIFIER = sim.DiscParams(tpr=0.7, fpr=0.2)
ATTEMPTS = 8


def main() -> None:
    print(f"success rate vs. attempts (verifier tpr={VERIFIER.tpr}, fpr={VERIFIER.fpr})\n")
    header = "chain            " + "".join(f"  n={n}" for n in range(1, ATTEMPTS + 1))
    print(header)
    for name, chain in CHAINS.items():
        cfg = sim.SimConfig(chain=chain, disc=VERIFIER, max_attempts=ATTEMPTS, trials=20000, seed=7)
        curve = sim.simulate_chain(cfg)
        row = name + "".join(f" {pt.p_correct:.2f}" for pt in curve)
        print(row)

    strong = CHAINS["strong critique"]
    print("\nwith a perfect verifier the curve approaches 'ever produced a correct")
    print("attempt', which has a closed form; the chain itself forgets its start:")
    for n in (1, 2, 4, 8, 50):
        print(
            f"  n={n:>2}: any-correct = {sim.analytic_any_correct(strong, n):.4f},"
            f" P(attempt n correct) = {sim.analytic_curve(strong, n):.4f}"
        )
    print(f"  stationary P(correct) = {sim.stationary_success(strong):.4f}")


if __name__ == "__main__":
    main()
