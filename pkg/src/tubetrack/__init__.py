"""Graph-based path tracking through convoluted tubes in 3D volumes."""
