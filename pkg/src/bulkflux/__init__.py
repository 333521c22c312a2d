"""Transport distance between interior/boundary density pairs with a
penalized exchange flux: geodesic solver, dual certificates, reference
solutions and entropy gradient flows on 1-D and strip grids."""

__version__ = "0.1.0"
