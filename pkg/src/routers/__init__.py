"""Command routers, one per CLI subcommand."""
