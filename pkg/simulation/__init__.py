# Simulation package initialization
