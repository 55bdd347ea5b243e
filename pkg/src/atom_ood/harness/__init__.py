"""Experiment harness: configs, theory simulations, the toy ablation and the CLI."""
