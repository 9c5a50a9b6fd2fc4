"""Domain services: graphs, sampling, caching, training, pipelines, surrogate and tuner."""
