# Estimation and inference package initialization
