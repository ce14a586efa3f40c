"""vaxnet test suite."""
