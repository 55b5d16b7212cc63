"""Physics engines and the rollout-level simulator."""
