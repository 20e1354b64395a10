"""FloydNet: global all-pairs relational refinement with pivotal attention.

Submodules
----------
graphs     graph data model, file I/O, generators, brute-force label oracles
nn         float64 tensors with recorded computation graph, differentiable
           primitives with hand-derived backwards, gradient checker
attention  pivotal attention kernels (naive reference and O(N^2)-memory
           streamed), combine operators, k-order generalization
model      relationship initialization, SuperNode, refinement blocks, readouts
wl         1-WL and k-FWL color refinement oracles and the curated pair suite
training   losses, AdamW, plateau schedule, synthetic-task training loops
cli        command-line entry point
"""

__version__ = "0.1.0"
