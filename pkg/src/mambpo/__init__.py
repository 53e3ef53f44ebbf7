"""Model-based multi-agent soft actor-critic on small particle worlds."""
