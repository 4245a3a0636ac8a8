"""CSI-based RF fingerprinting workbench."""
