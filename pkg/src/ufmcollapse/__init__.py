"""Global minimizers of the convexified unconstrained-feature model under imbalance."""
