# Manipulation searches, generators and sweeps
