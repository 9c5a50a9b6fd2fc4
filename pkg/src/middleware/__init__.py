"""Cross-cutting concerns wrapped around command dispatch."""
