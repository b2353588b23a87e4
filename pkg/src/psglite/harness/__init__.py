"""Dataset/checkpoint I/O, training loop, evaluation driver, benchmarks, CLI."""
