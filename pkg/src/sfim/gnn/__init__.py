"""Graph neural network core and the GNN-aided detectors."""
