"""Independent brute-force reference implementations used only by tests."""
