"""collusion-lab: coalition manipulation of RR, PS and MNW."""
