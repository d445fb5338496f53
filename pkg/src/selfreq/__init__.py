"""Random forest selection frequency with null-model false positive control."""
