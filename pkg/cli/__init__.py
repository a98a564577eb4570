"""Command-line surface: subcommands, run manifest, invariant suite, demo."""
