"""Power sampling and simulated annealing over sequence-level LM distributions."""
