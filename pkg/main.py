import sys

from src.udp_mesh.config import load_node_config
from src.udp_mesh.daemon import serve


# Run a node from a config file, e.g. `python main.py configs/node.yaml`
if __name__ == "__main__":
    config_path = sys.argv[1] if len(sys.argv) > 1 else "configs/node.yaml"
    sys.exit(serve(load_node_config(config_path)))
