"""Second-order response forecasts for partially observed Langevin subsystems."""
