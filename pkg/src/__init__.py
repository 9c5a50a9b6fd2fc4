"""GNN training control plane: sampling, caching, pipeline scheduling and auto-tuning."""
