"""Pattern hierarchy and the behavior functions of the executable patterns."""
