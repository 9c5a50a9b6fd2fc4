import argparse
import logging

from ..config import settings
from ..exceptions import EXIT_INTERNAL, EXIT_OK, CommandError
from ..models import GraphGenerator, GraphSource
from ..services.graph_service import build_graph, graph_stats, save_graph
from .common import CommandRouter, config_errors

router = CommandRouter()
logger = logging.getLogger("gnn_autotune.graph")


def arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--generator", choices=[g.value for g in GraphGenerator], default=GraphGenerator.SBM.value)
    parser.add_argument("--path", help="Input edge list or graph file for the edge-list/file generators")
    parser.add_argument("--nodes", type=int, default=300)
    parser.add_argument("--blocks", type=int, default=3)
    parser.add_argument("--p-in", type=float, default=0.3)
    parser.add_argument("--p-out", type=float, default=0.01)
    parser.add_argument("--min-degree", type=int, default=2)
    parser.add_argument("--exponent", type=float, default=2.5)
    parser.add_argument("--feat-dim", type=int, default=16)
    parser.add_argument("--classes", type=int, default=3)
    parser.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
    parser.add_argument("--out", required=True, help="Destination of the binary graph file")


@router.command("gen-graph", "Generate or convert a graph into the binary format", arguments)
def gen_graph(args: argparse.Namespace) -> int:
    """Write a graph file and print its stats"""
    with config_errors():
        source = GraphSource(generator=args.generator, path=args.path, n_nodes=args.nodes, n_blocks=args.blocks,
                             p_in=args.p_in, p_out=args.p_out, min_degree=args.min_degree,
                             exponent=args.exponent, feat_dim=args.feat_dim, num_classes=args.classes)
        g = build_graph(source, args.seed)
    try:
        save_graph(g, args.out)
    except OSError as e:
        raise CommandError(EXIT_INTERNAL, f"cannot write {args.out}: {e}") from e
    stats = graph_stats(g)
    print(stats.model_dump_json())
    logger.info(f"wrote {args.out}: {stats.num_nodes} nodes, {stats.num_edges} edges")
    return EXIT_OK
