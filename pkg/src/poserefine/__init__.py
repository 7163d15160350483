"""Sports camera extrinsic refinement by evolution strategy."""
